//! Multi-class gradient boosting over pluggable objectives, with early
//! stopping on a validation block and Cartesian grid search.

use serde::{Deserialize, Serialize};

use crate::data::{ClassWeights, Matrix, ScoreMatrix, SoftLabelMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::{derive_seed, seeded_rng};
use crate::objectives::{
    brier_grad_hess_with_floor, brier_score_matrix, logloss_grad_hess_with_floor,
    softmax_rows_matrix, GradHess, DEFAULT_HESS_MIN,
};
use crate::trees::{build_regression_tree_on, Tree, TreeConfig};
use rand::seq::SliceRandom;

/// Training objective for the booster. Early stopping and model selection
/// always use the weighted Brier validation score, whichever objective
/// drives the gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SoftmaxBrier,
    SoftmaxLogloss,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::SoftmaxBrier => write!(f, "softmax_brier"),
            Objective::SoftmaxLogloss => write!(f, "softmax_logloss"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub n_rounds_max: usize,
    /// Shrinkage in [0,1]; 0 disables updates entirely (useful in tests).
    pub learning_rate: f64,
    pub subsample: f64,
    pub tree: TreeConfig,
    pub objective: Objective,
    /// 0 disables early stopping.
    pub early_stopping_rounds: usize,
    pub hess_min: f64,
    pub seed: u64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            n_rounds_max: 100,
            learning_rate: 0.1,
            subsample: 1.0,
            tree: TreeConfig::default(),
            objective: Objective::SoftmaxBrier,
            early_stopping_rounds: 10,
            hess_min: DEFAULT_HESS_MIN,
            seed: 0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds_max < 1 {
            return Err(Error::validation("n_rounds_max must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.learning_rate) {
            return Err(Error::validation("learning_rate must be in [0,1]"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::validation("subsample must be in (0,1]"));
        }
        self.tree.validate()
    }
}

/// A fitted boosted ensemble: per round, one regression tree per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedEnsemble {
    /// rounds[r][c] is the class-c tree of round r+1.
    pub rounds: Vec<Vec<Tree>>,
    /// Per-class raw-score offset (all zeros: uniform prior).
    pub base_score: Vec<f64>,
    pub config: BoostConfig,
    /// 1-based count of rounds used by default at prediction time.
    pub best_round: usize,
    /// Weighted Brier on the validation block after each round, when a
    /// validation block was supplied.
    pub valid_history: Vec<f64>,
    /// Weighted Brier on the training rows after each round.
    pub train_history: Vec<f64>,
}

impl BoostedEnsemble {
    pub fn n_classes(&self) -> usize {
        self.base_score.len()
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }
}

fn compute_grad_hess(
    cfg: &BoostConfig,
    raw: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> Result<GradHess> {
    let scores = ScoreMatrix::raw(raw.clone())
        .map_err(|e| Error::numeric(format!("raw scores became non-finite: {e}")))?;
    match cfg.objective {
        Objective::SoftmaxBrier => {
            // the Brier loss is a mean over rows; trees consume the sum-scaled
            // derivatives so lambda acts per row, exactly as with the logloss
            // objective (which is already a sum)
            let mut gh = brier_grad_hess_with_floor(&scores, labels, weights, cfg.hess_min)?;
            let n = raw.nrows() as f64;
            for v in gh.grad.data_mut() {
                *v *= n;
            }
            for v in gh.hess.data_mut() {
                *v *= n;
            }
            Ok(gh)
        }
        Objective::SoftmaxLogloss => {
            logloss_grad_hess_with_floor(&scores, labels, cfg.hess_min)
        }
    }
}

fn add_tree_predictions(raw: &mut Matrix, trees: &[Tree], x: &Matrix, lr: f64) -> Result<()> {
    // one tree per class, applied in class order after the round completes
    for (c, tree) in trees.iter().enumerate() {
        let updates = exec::map_range(x.nrows(), |r| tree.predict_scalar(x.row(r)));
        for (r, upd) in updates.into_iter().enumerate() {
            let v = upd?;
            raw.set(r, c, raw.get(r, c) + lr * v);
        }
    }
    Ok(())
}

/// Fit a boosted ensemble on soft labels.
///
/// Raw scores start at zero; every round computes gradients and Hessians
/// from the configured objective, subsamples rows, fits one tree per class
/// on the same gradient snapshot, and applies the shrunken leaf values.
/// When a validation block is given, the weighted Brier score is tracked
/// per round; `best_round` is its argmin and early stopping halts after
/// `early_stopping_rounds` non-improving rounds.
pub fn fit_gbdt(
    x_train: &Matrix,
    y_train: &SoftLabelMatrix,
    weights: &ClassWeights,
    cfg: &BoostConfig,
    validation: Option<(&Matrix, &SoftLabelMatrix)>,
) -> Result<BoostedEnsemble> {
    cfg.validate()?;
    let n = x_train.nrows();
    let n_classes = y_train.n_classes();
    if y_train.n_rows() != n {
        return Err(Error::validation(format!(
            "{} label rows for {} feature rows",
            y_train.n_rows(),
            n
        )));
    }
    if weights.n_classes() != n_classes {
        return Err(Error::validation("class weight arity mismatch"));
    }
    if n == 0 {
        return Err(Error::validation("cannot fit on zero rows"));
    }
    if cfg.early_stopping_rounds > 0 && validation.is_none() {
        return Err(Error::validation(
            "early stopping requires a validation block",
        ));
    }
    if let Some((xv, yv)) = validation {
        if xv.nrows() != yv.n_rows() || yv.n_classes() != n_classes {
            return Err(Error::validation("validation shapes do not match"));
        }
    }

    let mut raw = Matrix::zeros(n, n_classes);
    let mut valid_raw = validation.map(|(xv, _)| Matrix::zeros(xv.nrows(), n_classes));
    let mut rounds: Vec<Vec<Tree>> = Vec::new();
    let mut valid_history: Vec<f64> = Vec::new();
    let mut train_history: Vec<f64> = Vec::new();
    let mut best_score = f64::INFINITY;
    let mut best_round = 0usize;
    let mut prev_train = f64::INFINITY;

    for round in 0..cfg.n_rounds_max {
        let gh = compute_grad_hess(cfg, &raw, y_train, weights).map_err(|e| match e {
            Error::Numeric(msg) => Error::numeric(format!("round {}: {msg}", round + 1)),
            other => other,
        })?;

        let rows: Vec<usize> = if cfg.subsample < 1.0 {
            let m = ((cfg.subsample * n as f64).floor() as usize).max(1);
            let mut ids: Vec<usize> = (0..n).collect();
            let mut rng = seeded_rng(derive_seed(cfg.seed, 0x5AB5_0000 + round as u64));
            ids.shuffle(&mut rng);
            let mut subset = ids[..m].to_vec();
            subset.sort_unstable();
            subset
        } else {
            (0..n).collect()
        };
        if rows.is_empty() {
            return Err(Error::validation(format!("round {}: empty subsample", round + 1)));
        }

        // per-class trees read the same gradient snapshot and are independent
        let class_ids: Vec<usize> = (0..n_classes).collect();
        let trees: Vec<Result<Tree>> = exec::map_collect(&class_ids, |&c| {
            let g = gh.grad.column(c);
            let h = gh.hess.column(c);
            let mut tree_cfg = cfg.tree.clone();
            tree_cfg.seed = derive_seed(cfg.seed, ((round as u64) << 16) | c as u64);
            build_regression_tree_on(x_train, &g, &h, &rows, &tree_cfg)
        });
        let mut round_trees = Vec::with_capacity(n_classes);
        for (c, tree) in trees.into_iter().enumerate() {
            round_trees.push(tree.map_err(|e| {
                Error::validation(format!("round {} class {c}: {e}", round + 1))
            })?);
        }

        add_tree_predictions(&mut raw, &round_trees, x_train, cfg.learning_rate)?;
        if let (Some(valid_raw), Some((xv, _))) = (valid_raw.as_mut(), validation) {
            add_tree_predictions(valid_raw, &round_trees, xv, cfg.learning_rate)?;
        }
        rounds.push(round_trees);

        let train_score = brier_score_matrix(&softmax_rows_matrix(&raw), y_train, weights);
        if cfg.objective == Objective::SoftmaxBrier
            && cfg.subsample >= 1.0
            && train_score > prev_train
        {
            log::warn!(
                "round {}: training Brier rose from {prev_train:.6} to {train_score:.6} (non-convexity guard)",
                round + 1
            );
        }
        prev_train = train_score;
        train_history.push(train_score);

        if let (Some(valid_raw), Some((_, yv))) = (valid_raw.as_ref(), validation) {
            let score = brier_score_matrix(&softmax_rows_matrix(valid_raw), yv, weights);
            if !score.is_finite() {
                return Err(Error::numeric(format!(
                    "round {}: non-finite validation score",
                    round + 1
                )));
            }
            valid_history.push(score);
            if score < best_score {
                best_score = score;
                best_round = round + 1;
            } else if cfg.early_stopping_rounds > 0
                && round + 1 - best_round >= cfg.early_stopping_rounds
            {
                break;
            }
        }
    }

    if validation.is_none() {
        best_round = rounds.len();
    }
    Ok(BoostedEnsemble {
        rounds,
        base_score: vec![0.0; n_classes],
        config: cfg.clone(),
        best_round,
        valid_history,
        train_history,
    })
}

/// Predict probabilities using the first `at_round` rounds (default:
/// `best_round`). `at_round` 0 yields uniform rows.
pub fn gbdt_predict(
    model: &BoostedEnsemble,
    x: &Matrix,
    at_round: Option<usize>,
) -> Result<ScoreMatrix> {
    let k = at_round.unwrap_or(model.best_round);
    if k > model.rounds.len() {
        return Err(Error::validation(format!(
            "at_round {k} exceeds {} fitted rounds",
            model.rounds.len()
        )));
    }
    if let Some(round) = model.rounds.first() {
        if let Some(tree) = round.first() {
            if tree.n_features != x.ncols() {
                return Err(Error::validation(format!(
                    "feature arity {} does not match model arity {}",
                    x.ncols(),
                    tree.n_features
                )));
            }
        }
    }
    let n_classes = model.n_classes();
    let mut raw = Matrix::zeros(x.nrows(), n_classes);
    for r in 0..x.nrows() {
        raw.row_mut(r).copy_from_slice(&model.base_score);
    }
    for round in &model.rounds[..k] {
        add_tree_predictions(&mut raw, round, x, model.config.learning_rate)?;
    }
    ScoreMatrix::probability(softmax_rows_matrix(&raw))
}

/// Grid axes over the tunable [`BoostConfig`] fields. Empty axes fall back
/// to the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    #[serde(default)]
    pub max_depth: Vec<u32>,
    #[serde(default)]
    pub min_child_weight: Vec<f64>,
    #[serde(default)]
    pub learning_rate: Vec<f64>,
    #[serde(default)]
    pub subsample: Vec<f64>,
    #[serde(default)]
    pub colsample: Vec<f64>,
    #[serde(default)]
    pub lambda: Vec<f64>,
}

impl ParamGrid {
    /// All configurations in grid order (row-major over the axes).
    pub fn expand(&self, base: &BoostConfig) -> Vec<BoostConfig> {
        fn axis<T: Clone>(values: &[T], fallback: T) -> Vec<T> {
            if values.is_empty() {
                vec![fallback]
            } else {
                values.to_vec()
            }
        }
        let depths = axis(&self.max_depth, base.tree.max_depth);
        let mcws = axis(&self.min_child_weight, base.tree.min_child_weight);
        let lrs = axis(&self.learning_rate, base.learning_rate);
        let subs = axis(&self.subsample, base.subsample);
        let cols = axis(&self.colsample, base.tree.colsample);
        let lambdas = axis(&self.lambda, base.tree.lambda);
        let mut out = Vec::new();
        for &depth in &depths {
            for &mcw in &mcws {
                for &lr in &lrs {
                    for &sub in &subs {
                        for &col in &cols {
                            for &lambda in &lambdas {
                                let mut cfg = base.clone();
                                cfg.tree.max_depth = depth;
                                cfg.tree.min_child_weight = mcw;
                                cfg.learning_rate = lr;
                                cfg.subsample = sub;
                                cfg.tree.colsample = col;
                                cfg.tree.lambda = lambda;
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid-search row: the evaluated configuration and its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResult {
    pub config_id: usize,
    pub max_depth: u32,
    pub min_child_weight: f64,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample: f64,
    pub lambda: f64,
    pub valid_brier: Option<f64>,
    pub best_round: usize,
    pub error: Option<String>,
}

impl GridResult {
    pub const CSV_HEADER: &'static str =
        "config_id,max_depth,min_child_weight,learning_rate,subsample,colsample,lambda,valid_brier,best_round";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.config_id,
            self.max_depth,
            self.min_child_weight,
            self.learning_rate,
            self.subsample,
            self.colsample,
            self.lambda,
            self.valid_brier
                .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}")),
            self.best_round
        )
    }
}

/// Evaluate every configuration in the grid with early stopping; the winner
/// has the lowest validation Brier, ties broken by fewer trees, then lower
/// depth, then grid order. Individual fit failures are recorded and skipped.
pub fn grid_search(
    base: &BoostConfig,
    grid: &ParamGrid,
    x_train: &Matrix,
    y_train: &SoftLabelMatrix,
    weights: &ClassWeights,
    x_valid: &Matrix,
    y_valid: &SoftLabelMatrix,
) -> Result<(BoostConfig, Vec<GridResult>)> {
    let configs = grid.expand(base);
    if configs.is_empty() {
        return Err(Error::validation("empty parameter grid"));
    }
    let mut results = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, f64, usize, u32)> = None; // (idx, score, best_round, depth)
    for (idx, cfg) in configs.iter().enumerate() {
        match fit_gbdt(x_train, y_train, weights, cfg, Some((x_valid, y_valid))) {
            Ok(model) => {
                let score = model
                    .valid_history
                    .get(model.best_round.saturating_sub(1))
                    .copied()
                    .unwrap_or(f64::INFINITY);
                results.push(GridResult {
                    config_id: idx,
                    max_depth: cfg.tree.max_depth,
                    min_child_weight: cfg.tree.min_child_weight,
                    learning_rate: cfg.learning_rate,
                    subsample: cfg.subsample,
                    colsample: cfg.tree.colsample,
                    lambda: cfg.tree.lambda,
                    valid_brier: Some(score),
                    best_round: model.best_round,
                    error: None,
                });
                let candidate = (idx, score, model.best_round, cfg.tree.max_depth);
                best = Some(match best {
                    None => candidate,
                    Some(current) => {
                        let (_, cur_score, cur_rounds, cur_depth) = current;
                        let wins = score < cur_score
                            || (score == cur_score
                                && (candidate.2 < cur_rounds
                                    || (candidate.2 == cur_rounds && candidate.3 < cur_depth)));
                        if wins {
                            candidate
                        } else {
                            current
                        }
                    }
                });
            }
            Err(e) => {
                log::warn!("grid config {idx} failed: {e}");
                results.push(GridResult {
                    config_id: idx,
                    max_depth: cfg.tree.max_depth,
                    min_child_weight: cfg.tree.min_child_weight,
                    learning_rate: cfg.learning_rate,
                    subsample: cfg.subsample,
                    colsample: cfg.tree.colsample,
                    lambda: cfg.tree.lambda,
                    valid_brier: None,
                    best_round: 0,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    match best {
        Some((idx, _, _, _)) => Ok((configs[idx].clone(), results)),
        None => Err(Error::validation("every grid configuration failed")),
    }
}
