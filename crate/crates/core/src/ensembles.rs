//! Participant-level folds, out-of-fold stack transferring of the train-only
//! room variable, level-2 stacking, and prediction averaging.

use serde::{Deserialize, Serialize};

use crate::boosting::{fit_gbdt, gbdt_predict, grid_search, BoostConfig, BoostedEnsemble, GridResult, ParamGrid};
use crate::data::{
    harden_labels, ClassWeights, FrameTable, Matrix, ScoreMatrix, SoftLabelMatrix,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::learners::{
    column_means, fit_forest, fit_gaussian_nb, forest_predict, impute_with, nb_predict, Forest,
    ForestConfig, GaussianNb,
};
use crate::numeric::{derive_seed, stable_name_hash};

/// Leave-one-participant-out folds over the non-holdout participants, with
/// the holdout participants kept as a separate validation block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Vec<u32>>,
    pub holdout: Vec<u32>,
}

impl FoldPlan {
    pub fn fold_participants(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

/// Build the fold plan: every non-holdout participant becomes one fold.
pub fn participant_folds(participants: &[u32], holdout: &[u32]) -> Result<FoldPlan> {
    let mut sorted: Vec<u32> = participants.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != participants.len() {
        return Err(Error::validation("duplicate participant ids"));
    }
    for h in holdout {
        if !sorted.contains(h) {
            return Err(Error::validation(format!(
                "holdout participant {h} is not in the participant set"
            )));
        }
    }
    let folds: Vec<Vec<u32>> = sorted
        .iter()
        .filter(|p| !holdout.contains(p))
        .map(|&p| vec![p])
        .collect();
    if folds.is_empty() {
        return Err(Error::validation(
            "no training participants remain outside the holdout",
        ));
    }
    let mut holdout = holdout.to_vec();
    holdout.sort_unstable();
    Ok(FoldPlan { folds, holdout })
}

/// Out-of-fold predictions with the provenance needed for leakage audits.
#[derive(Debug, Clone, PartialEq)]
pub struct OofPrediction {
    pub values: ScoreMatrix,
    /// For each row: the fold whose model produced its prediction.
    pub producer_fold: Vec<usize>,
    /// For each fold: the participants its model was fitted on.
    pub fold_train_participants: Vec<Vec<u32>>,
    pub row_participants: Vec<u32>,
}

impl OofPrediction {
    /// Every row's producer must have been fitted without that row's
    /// participant.
    pub fn audit_no_leakage(&self) -> Result<()> {
        for (row, &fold) in self.producer_fold.iter().enumerate() {
            let pid = self.row_participants[row];
            if self.fold_train_participants[fold].contains(&pid) {
                return Err(Error::validation(format!(
                    "row {row}: participant {pid} was in the training set of its producer fold {fold}"
                )));
            }
        }
        Ok(())
    }
}

/// A level-1 learner choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Boost(BoostConfig),
    Forest(ForestConfig),
    GaussianNb,
}

/// A fitted level-1 model. Naive Bayes carries the imputation means used to
/// complete missing features at prediction time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Boost(BoostedEnsemble),
    Forest(Forest),
    Nb {
        model: GaussianNb,
        imputation: Vec<f64>,
    },
}

/// Fit a model spec on the given rows. Booster fits inside folds run
/// without early stopping (there is no validation block inside a fold).
pub fn fit_spec(
    spec: &ModelSpec,
    x: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    seed: u64,
) -> Result<FittedModel> {
    match spec {
        ModelSpec::Boost(cfg) => {
            let mut cfg = cfg.clone();
            cfg.early_stopping_rounds = 0;
            cfg.seed = seed;
            Ok(FittedModel::Boost(fit_gbdt(x, labels, weights, &cfg, None)?))
        }
        ModelSpec::Forest(cfg) => {
            let mut cfg = cfg.clone();
            cfg.tree.seed = seed;
            Ok(FittedModel::Forest(fit_forest(x, labels, weights, &cfg)?))
        }
        ModelSpec::GaussianNb => {
            let imputation = column_means(x);
            let complete = impute_with(x, &imputation);
            let hard = harden_labels(labels);
            let model = fit_gaussian_nb(&complete, &hard, labels.n_classes())?;
            Ok(FittedModel::Nb { model, imputation })
        }
    }
}

pub fn predict_model(model: &FittedModel, x: &Matrix) -> Result<ScoreMatrix> {
    match model {
        FittedModel::Boost(m) => gbdt_predict(m, x, None),
        FittedModel::Forest(m) => forest_predict(m, x),
        FittedModel::Nb { model, imputation } => {
            let complete = impute_with(x, imputation);
            nb_predict(model, &complete)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackTransferConfig {
    pub learner: ModelSpec,
    pub seed: u64,
    /// Prefix of the appended probability columns.
    pub column_prefix: String,
}

impl Default for StackTransferConfig {
    fn default() -> Self {
        StackTransferConfig {
            learner: ModelSpec::Forest(ForestConfig {
                n_trees: 30,
                ..ForestConfig::default()
            }),
            seed: 0,
            column_prefix: "room_p".into(),
        }
    }
}

/// Propagate the train-only room variable to both sets.
///
/// Per fold, the aux learner is fitted on every other fold's rows and
/// writes room-probability columns for the held-out fold (step 1); test
/// rows receive the arithmetic mean of all fold models (step 2). Both
/// outputs drop the exact room values and carry the same new columns in
/// the same order, ready to be used as features (step 3). The fold plan
/// must have an empty holdout: every train participant is a fold here.
pub fn stack_transfer(
    train: &FrameTable,
    test: &FrameTable,
    folds: &FoldPlan,
    cfg: &StackTransferConfig,
) -> Result<(FrameTable, FrameTable, OofPrediction)> {
    if !folds.holdout.is_empty() {
        return Err(Error::validation(
            "stack_transfer folds must cover all train participants (empty holdout)",
        ));
    }
    if train.columns != test.columns {
        return Err(Error::validation(
            "train and test feature columns must match before stack transfer",
        ));
    }
    if let Some(row) = train.rows.iter().position(|r| r.room.is_none()) {
        return Err(Error::validation(format!(
            "train row {row} has no room value"
        )));
    }
    if test.rows.iter().any(|r| r.room.is_some()) {
        return Err(Error::validation("test rows must not carry a room value"));
    }
    let fold_universe = folds.fold_participants();
    {
        let mut train_participants = train.participants();
        train_participants.sort_unstable();
        if fold_universe != train_participants {
            return Err(Error::validation(
                "fold participants must equal the train participants",
            ));
        }
    }

    let n_rooms = train
        .rows
        .iter()
        .filter_map(|r| r.room)
        .max()
        .map_or(0, |m| m as usize + 1);
    if n_rooms < 2 {
        return Err(Error::validation("need at least two room classes"));
    }
    let x_train = train.feature_matrix();
    let x_test = test.feature_matrix();
    let room_labels = SoftLabelMatrix::one_hot(
        &train
            .rows
            .iter()
            .map(|r| r.room.unwrap() as usize)
            .collect::<Vec<_>>(),
        n_rooms,
    )?;
    let room_weights = ClassWeights::uniform(n_rooms);

    struct FoldOutput {
        held_rows: Vec<usize>,
        held_probs: ScoreMatrix,
        test_probs: ScoreMatrix,
        fit_participants: Vec<u32>,
    }

    let fold_ids: Vec<usize> = (0..folds.folds.len()).collect();
    let outputs: Vec<Result<FoldOutput>> = exec::map_collect(&fold_ids, |&i| {
        let held = &folds.folds[i];
        let fit_participants: Vec<u32> = fold_universe
            .iter()
            .copied()
            .filter(|p| !held.contains(p))
            .collect();
        let fit_rows = train.participant_row_indices(&fit_participants);
        let held_rows = train.participant_row_indices(held);
        if fit_rows.is_empty() {
            return Err(Error::validation(format!("fold {i}: empty training remainder")));
        }
        let fit_labels = room_labels.select_rows(&fit_rows);
        for room in 0..n_rooms {
            if !fit_rows
                .iter()
                .any(|&r| train.rows[r].room == Some(room as u32))
            {
                log::warn!(
                    "fold {i}: room class {room} absent from its training folds; the model will emit a zero column"
                );
            }
        }
        let model = fit_spec(
            &cfg.learner,
            &x_train.select_rows(&fit_rows),
            &fit_labels,
            &room_weights,
            derive_seed(cfg.seed, i as u64),
        )?;
        let held_probs = predict_model(&model, &x_train.select_rows(&held_rows))?;
        let test_probs = predict_model(&model, &x_test)?;
        Ok(FoldOutput {
            held_rows,
            held_probs,
            test_probs,
            fit_participants,
        })
    });

    let mut oof = Matrix::zeros(train.n_rows(), n_rooms);
    let mut producer_fold = vec![usize::MAX; train.n_rows()];
    let mut fold_train_participants = Vec::with_capacity(folds.folds.len());
    let mut test_mean = Matrix::zeros(test.n_rows(), n_rooms);
    let n_folds = folds.folds.len() as f64;
    for (i, output) in outputs.into_iter().enumerate() {
        let output = output?;
        for (k, &row) in output.held_rows.iter().enumerate() {
            oof.row_mut(row).copy_from_slice(output.held_probs.row(k));
            producer_fold[row] = i;
        }
        for r in 0..test.n_rows() {
            let src = output.test_probs.row(r);
            let dst = test_mean.row_mut(r);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s / n_folds;
            }
        }
        fold_train_participants.push(output.fit_participants);
    }
    if producer_fold.iter().any(|&f| f == usize::MAX) {
        return Err(Error::validation("some train rows were never scored out-of-fold"));
    }

    let new_columns: Vec<String> = (0..n_rooms)
        .map(|r| format!("{}{r:02}", cfg.column_prefix))
        .collect();
    let mut train_out = train.clone();
    train_out.columns.extend(new_columns.iter().cloned());
    for (r, row) in train_out.rows.iter_mut().enumerate() {
        row.features.extend_from_slice(oof.row(r));
        row.room = None;
    }
    let mut test_out = test.clone();
    test_out.columns.extend(new_columns);
    for (r, row) in test_out.rows.iter_mut().enumerate() {
        row.features.extend_from_slice(test_mean.row(r));
    }
    debug_assert_eq!(train_out.columns, test_out.columns);

    let oof = OofPrediction {
        values: ScoreMatrix::probability(oof)?,
        producer_fold,
        fold_train_participants,
        row_participants: train.row_participants(),
    };
    oof.audit_no_leakage()?;
    Ok((train_out, test_out, oof))
}

/// A named level-1 entry of the stacking zoo. Seeds derive from the name,
/// so reordering specs cannot change any individual model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOneSpec {
    pub name: String,
    pub model: ModelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackConfig {
    pub include_base_features: bool,
    pub stacker_base: BoostConfig,
    pub stacker_grid: ParamGrid,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            include_base_features: false,
            stacker_base: BoostConfig {
                early_stopping_rounds: 10,
                ..BoostConfig::default()
            },
            stacker_grid: ParamGrid::default(),
            seed: 0,
        }
    }
}

/// A fitted two-level stack: refitted level-1 models feeding a grid-searched
/// booster over their out-of-fold probability columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub level1: Vec<(String, FittedModel)>,
    pub stacker: BoostedEnsemble,
    pub include_base_features: bool,
    pub n_classes: usize,
}

#[derive(Debug, Clone)]
pub struct StackFitReport {
    /// Specs dropped because a fold fit failed.
    pub dropped_specs: Vec<(String, String)>,
    /// Per surviving spec: its out-of-fold predictions over the fold rows.
    pub oof: Vec<(String, OofPrediction)>,
    /// Grid-search table of the stacker.
    pub stacker_grid: Vec<GridResult>,
    /// Per surviving spec: holdout Brier of the refit level-1 model.
    pub level1_holdout_brier: Vec<(String, f64)>,
    /// Holdout Brier of the stacked model.
    pub stacked_holdout_brier: f64,
}

fn oof_for_spec(
    spec: &LevelOneSpec,
    table: &FrameTable,
    x: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    folds: &FoldPlan,
    fold_rows: &[usize],
    base_seed: u64,
) -> Result<(Matrix, OofPrediction)> {
    let spec_seed = derive_seed(base_seed, stable_name_hash(&spec.name));
    let fold_universe = folds.fold_participants();
    struct FoldOut {
        held_rows: Vec<usize>,
        probs: ScoreMatrix,
        fit_participants: Vec<u32>,
    }
    let fold_ids: Vec<usize> = (0..folds.folds.len()).collect();
    let outputs: Vec<Result<FoldOut>> = exec::map_collect(&fold_ids, |&i| {
        let held = &folds.folds[i];
        let fit_participants: Vec<u32> = fold_universe
            .iter()
            .copied()
            .filter(|p| !held.contains(p))
            .collect();
        let fit_rows = table.participant_row_indices(&fit_participants);
        let held_rows = table.participant_row_indices(held);
        if fit_rows.is_empty() || held_rows.is_empty() {
            return Err(Error::validation(format!(
                "spec {}: fold {i} has an empty side",
                spec.name
            )));
        }
        let model = fit_spec(
            &spec.model,
            &x.select_rows(&fit_rows),
            &labels.select_rows(&fit_rows),
            weights,
            derive_seed(spec_seed, i as u64),
        )?;
        let probs = predict_model(&model, &x.select_rows(&held_rows))?;
        Ok(FoldOut {
            held_rows,
            probs,
            fit_participants,
        })
    });

    let n_classes = labels.n_classes();
    // dense over all table rows, then gathered down to the fold rows
    let mut dense = Matrix::zeros(table.n_rows(), n_classes);
    let mut producer = vec![usize::MAX; table.n_rows()];
    let mut fold_train_participants = Vec::new();
    for (i, out) in outputs.into_iter().enumerate() {
        let out = out?;
        for (k, &row) in out.held_rows.iter().enumerate() {
            dense.row_mut(row).copy_from_slice(out.probs.row(k));
            producer[row] = i;
        }
        fold_train_participants.push(out.fit_participants);
    }
    let mut rows = Vec::with_capacity(fold_rows.len());
    let mut producer_fold = Vec::with_capacity(fold_rows.len());
    let mut row_participants = Vec::with_capacity(fold_rows.len());
    for &r in fold_rows {
        if producer[r] == usize::MAX {
            return Err(Error::validation(format!(
                "spec {}: row {r} was never scored out-of-fold",
                spec.name
            )));
        }
        rows.push(dense.row(r).to_vec());
        producer_fold.push(producer[r]);
        row_participants.push(table.rows[r].participant_id);
    }
    let values = Matrix::from_rows(&rows)?;
    let oof = OofPrediction {
        values: ScoreMatrix::probability(values.clone())?,
        producer_fold,
        fold_train_participants,
        row_participants,
    };
    oof.audit_no_leakage()?;
    Ok((values, oof))
}

/// Fit the two-level stack.
///
/// For every spec, out-of-fold probability columns are produced over the
/// fold rows under the same leave-one-participant-out discipline as stack
/// transferring; the level-2 booster is grid-searched on those columns
/// (optionally concatenated with the base features), with the holdout block
/// as its validation set. Level-1 models are refitted on all fold rows for
/// prediction time. A spec whose fold fits fail is dropped with a warning;
/// fewer than two survivors is an error.
pub fn fit_stack(
    specs: &[LevelOneSpec],
    folds: &FoldPlan,
    table: &FrameTable,
    weights: &ClassWeights,
    cfg: &StackConfig,
) -> Result<(StackedModel, StackFitReport)> {
    if specs.len() < 2 {
        return Err(Error::validation("stacking needs at least two level-1 specs"));
    }
    if folds.holdout.is_empty() {
        return Err(Error::validation(
            "stacking needs a nonempty holdout block for the stacker's validation",
        ));
    }
    let labels = table.soft_labels()?;
    let x = table.feature_matrix();
    let fold_rows = table.participant_row_indices(&folds.fold_participants());
    let holdout_rows = table.participant_row_indices(&folds.holdout);
    if fold_rows.is_empty() || holdout_rows.is_empty() {
        return Err(Error::validation("fold rows and holdout rows must be nonempty"));
    }

    let mut survivors: Vec<&LevelOneSpec> = Vec::new();
    let mut oof_columns: Vec<Matrix> = Vec::new();
    let mut report_oof = Vec::new();
    let mut dropped = Vec::new();
    for spec in specs {
        match oof_for_spec(
            spec, table, &x, &labels, weights, folds, &fold_rows, cfg.seed,
        ) {
            Ok((values, oof)) => {
                survivors.push(spec);
                oof_columns.push(values);
                report_oof.push((spec.name.clone(), oof));
            }
            Err(e) => {
                log::warn!("level-1 spec {} dropped: {e}", spec.name);
                dropped.push((spec.name.clone(), e.to_string()));
            }
        }
    }
    if survivors.len() < 2 {
        return Err(Error::validation(format!(
            "only {} level-1 spec(s) survived; stacking needs two",
            survivors.len()
        )));
    }

    // refit survivors on all fold rows
    let x_fold = x.select_rows(&fold_rows);
    let y_fold = labels.select_rows(&fold_rows);
    let refits: Vec<Result<FittedModel>> = exec::map_collect(&survivors, |spec| {
        let spec_seed = derive_seed(cfg.seed, stable_name_hash(&spec.name));
        fit_spec(
            &spec.model,
            &x_fold,
            &y_fold,
            weights,
            derive_seed(spec_seed, 0xF1_F1),
        )
    });
    let mut level1: Vec<(String, FittedModel)> = Vec::with_capacity(survivors.len());
    for (spec, refit) in survivors.iter().zip(refits) {
        level1.push((spec.name.clone(), refit?));
    }

    // stacker training matrix: OOF columns (+ base features when flagged)
    let mut stack_train = oof_columns[0].clone();
    for cols in &oof_columns[1..] {
        stack_train = stack_train.hstack(cols)?;
    }
    if cfg.include_base_features {
        stack_train = stack_train.hstack(&x_fold)?;
    }
    // stacker validation: refit level-1 models applied to the holdout block
    let x_holdout = x.select_rows(&holdout_rows);
    let y_holdout = labels.select_rows(&holdout_rows);
    let mut level1_holdout_brier = Vec::new();
    let mut stack_valid: Option<Matrix> = None;
    for (name, model) in &level1 {
        let probs = predict_model(model, &x_holdout)?;
        let brier = crate::objectives::brier_score(&probs, &y_holdout, weights)?;
        level1_holdout_brier.push((name.clone(), brier));
        stack_valid = Some(match stack_valid {
            None => probs.values().clone(),
            Some(m) => m.hstack(probs.values())?,
        });
    }
    let mut stack_valid = stack_valid.expect(">= 2 survivors");
    if cfg.include_base_features {
        stack_valid = stack_valid.hstack(&x_holdout)?;
    }

    let mut stacker_base = cfg.stacker_base.clone();
    stacker_base.seed = derive_seed(cfg.seed, 0x57AC);
    if stacker_base.early_stopping_rounds == 0 {
        stacker_base.early_stopping_rounds = 10;
    }
    let (best_cfg, grid_table) = grid_search(
        &stacker_base,
        &cfg.stacker_grid,
        &stack_train,
        &y_fold,
        weights,
        &stack_valid,
        &y_holdout,
    )?;
    let stacker = fit_gbdt(
        &stack_train,
        &y_fold,
        weights,
        &best_cfg,
        Some((&stack_valid, &y_holdout)),
    )?;

    let model = StackedModel {
        level1,
        stacker,
        include_base_features: cfg.include_base_features,
        n_classes: labels.n_classes(),
    };
    let stacked_probs = stack_predict(&model, &x_holdout)?;
    let stacked_holdout_brier =
        crate::objectives::brier_score(&stacked_probs, &y_holdout, weights)?;
    Ok((
        model,
        StackFitReport {
            dropped_specs: dropped,
            oof: report_oof,
            stacker_grid: grid_table,
            level1_holdout_brier,
            stacked_holdout_brier,
        },
    ))
}

/// Predict with the stacked model: level-1 probabilities (from the refit
/// models) feed the stacker.
pub fn stack_predict(model: &StackedModel, x: &Matrix) -> Result<ScoreMatrix> {
    let mut stacked: Option<Matrix> = None;
    for (_, level1) in &model.level1 {
        let probs = predict_model(level1, x)?;
        stacked = Some(match stacked {
            None => probs.values().clone(),
            Some(m) => m.hstack(probs.values())?,
        });
    }
    let mut stacked = stacked.ok_or_else(|| Error::validation("stack has no level-1 models"))?;
    if model.include_base_features {
        stacked = stacked.hstack(x)?;
    }
    gbdt_predict(&model.stacker, &stacked, None)
}

/// Elementwise mean of probability matrices of identical shape.
pub fn average_predictions(predictions: &[ScoreMatrix]) -> Result<ScoreMatrix> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::validation("nothing to average"))?;
    let (n, c) = (first.n_rows(), first.n_classes());
    for (i, p) in predictions.iter().enumerate() {
        if p.n_rows() != n || p.n_classes() != c {
            return Err(Error::validation(format!(
                "prediction {i} has shape {}x{}, expected {n}x{c}",
                p.n_rows(),
                p.n_classes()
            )));
        }
    }
    let k = predictions.len() as f64;
    let mut out = Matrix::zeros(n, c);
    for p in predictions {
        for r in 0..n {
            let src = p.row(r);
            let dst = out.row_mut(r);
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s / k;
            }
        }
    }
    ScoreMatrix::probability(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameRow;
    use crate::numeric::seeded_rng;
    use crate::trees::TreeConfig;
    use rand::Rng;

    #[test]
    fn ten_participants_with_two_holdout_gives_eight_folds() {
        let participants: Vec<u32> = (1..=10).collect();
        let plan = participant_folds(&participants, &[6, 10]).unwrap();
        assert_eq!(plan.folds.len(), 8);
        assert_eq!(plan.holdout, vec![6, 10]);
        // disjoint and covering
        let mut all = plan.fold_participants();
        all.extend(&plan.holdout);
        all.sort_unstable();
        assert_eq!(all, participants);
    }

    #[test]
    fn empty_holdout_gives_one_fold_per_participant() {
        let participants: Vec<u32> = (1..=10).collect();
        let plan = participant_folds(&participants, &[]).unwrap();
        assert_eq!(plan.folds.len(), 10);
        for (i, fold) in plan.folds.iter().enumerate() {
            assert_eq!(fold, &vec![participants[i]]);
        }
    }

    #[test]
    fn holdout_of_everything_is_rejected() {
        assert!(participant_folds(&[1, 2], &[1, 2]).is_err());
    }

    /// Synthetic table: feature 0 determines the room by bucket, features
    /// 1-2 carry activity signal, feature 3 is noise.
    fn aux_tables(
        n_participants: u32,
        rows_each: usize,
        shuffle_rooms: bool,
        seed: u64,
    ) -> (FrameTable, FrameTable) {
        let columns: Vec<String> =
            (0..4).map(|i| format!("f{i}")).collect();
        let mut rng = seeded_rng(seed);
        let mut make = |pid_range: std::ops::RangeInclusive<u32>, with_room: bool| {
            let mut t = FrameTable::new(columns.clone(), 3);
            for pid in pid_range {
                let mut rooms = Vec::new();
                for s in 0..rows_each {
                    let f0: f64 = rng.gen_range(0.0..3.0);
                    let room = f0.floor() as u32;
                    let activity = usize::from(rng.gen_range(0.0..1.0) < 0.5);
                    let f1 = activity as f64 + rng.gen_range(-0.2..0.2);
                    let mut label = vec![0.0; 3];
                    label[activity] = 1.0;
                    rooms.push(room);
                    t.rows.push(FrameRow {
                        participant_id: pid,
                        subsequence_id: 0,
                        second_index: s as u32,
                        features: vec![f0, f1, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                        room: None,
                        soft_label: Some(label),
                    });
                }
                if with_room {
                    if shuffle_rooms {
                        // break the feature-room link within the participant
                        let mut shuffled = rooms.clone();
                        use rand::seq::SliceRandom;
                        shuffled.shuffle(&mut rng);
                        let base = t.rows.len() - rows_each;
                        for (k, &room) in shuffled.iter().enumerate() {
                            t.rows[base + k].room = Some(room);
                        }
                    } else {
                        let base = t.rows.len() - rows_each;
                        for (k, &room) in rooms.iter().enumerate() {
                            t.rows[base + k].room = Some(room);
                        }
                    }
                }
            }
            t
        };
        let train = make(1..=n_participants, true);
        let test = make(n_participants + 1..=n_participants + 2, false);
        (train, test)
    }

    fn transfer_cfg() -> StackTransferConfig {
        StackTransferConfig {
            learner: ModelSpec::Forest(ForestConfig {
                n_trees: 15,
                tree: TreeConfig {
                    max_depth: 5,
                    min_child_weight: 2.0,
                    ..TreeConfig::default()
                },
                ..ForestConfig::default()
            }),
            seed: 11,
            column_prefix: "room_p".into(),
        }
    }

    #[test]
    fn deterministic_aux_target_is_recovered_out_of_fold() {
        let (train, test) = aux_tables(6, 120, false, 5);
        let plan = participant_folds(&train.participants(), &[]).unwrap();
        let (train2, test2, oof) =
            stack_transfer(&train, &test, &plan, &transfer_cfg()).unwrap();
        oof.audit_no_leakage().unwrap();
        assert_eq!(train2.columns, test2.columns);
        assert!(train2.rows.iter().all(|r| r.room.is_none()));
        // hardened OOF accuracy
        let correct = (0..train.n_rows())
            .filter(|&r| {
                let probs = oof.values.row(r);
                let pred = crate::data::harden_labels(
                    &SoftLabelMatrix::from_rows(&[probs.to_vec()]).unwrap(),
                )[0];
                pred == train.rows[r].room.unwrap() as usize
            })
            .count();
        let accuracy = correct as f64 / train.n_rows() as f64;
        assert!(accuracy >= 0.95, "OOF accuracy {accuracy}");
    }

    #[test]
    fn shuffled_aux_target_scores_at_chance() {
        let (train, test) = aux_tables(6, 150, true, 6);
        let plan = participant_folds(&train.participants(), &[]).unwrap();
        let (_, _, oof) = stack_transfer(&train, &test, &plan, &transfer_cfg()).unwrap();
        let correct = (0..train.n_rows())
            .filter(|&r| {
                let probs = oof.values.row(r);
                let pred = crate::data::harden_labels(
                    &SoftLabelMatrix::from_rows(&[probs.to_vec()]).unwrap(),
                )[0];
                pred == train.rows[r].room.unwrap() as usize
            })
            .count();
        let accuracy = correct as f64 / train.n_rows() as f64;
        assert!(
            (accuracy - 1.0 / 3.0).abs() <= 0.05,
            "chance-level accuracy expected, got {accuracy}"
        );
    }

    #[test]
    fn test_rows_get_the_fold_mean() {
        let (train, test) = aux_tables(4, 60, false, 9);
        let plan = participant_folds(&train.participants(), &[]).unwrap();
        let cfg = transfer_cfg();
        let (_, test2, _) = stack_transfer(&train, &test, &plan, &cfg).unwrap();
        // refit each fold model by hand and average
        let x_train = train.feature_matrix();
        let x_test = test.feature_matrix();
        let room_labels = SoftLabelMatrix::one_hot(
            &train.rows.iter().map(|r| r.room.unwrap() as usize).collect::<Vec<_>>(),
            3,
        )
        .unwrap();
        let w = ClassWeights::uniform(3);
        let mut fold_preds = Vec::new();
        for (i, held) in plan.folds.iter().enumerate() {
            let fit_participants: Vec<u32> = plan
                .fold_participants()
                .into_iter()
                .filter(|p| !held.contains(p))
                .collect();
            let fit_rows = train.participant_row_indices(&fit_participants);
            let model = fit_spec(
                &cfg.learner,
                &x_train.select_rows(&fit_rows),
                &room_labels.select_rows(&fit_rows),
                &w,
                derive_seed(cfg.seed, i as u64),
            )
            .unwrap();
            fold_preds.push(predict_model(&model, &x_test).unwrap());
        }
        let mean = average_predictions(&fold_preds).unwrap();
        let room_col = test2.column_index("room_p00").unwrap();
        for (r, row) in test2.rows.iter().enumerate() {
            for c in 0..3 {
                assert!(
                    (row.features[room_col + c] - mean.row(r)[c]).abs() < 1e-12,
                    "row {r} class {c}"
                );
            }
        }
    }

    #[test]
    fn averaging_identical_inputs_is_identity() {
        let p = ScoreMatrix::probability(
            Matrix::from_rows(&[vec![0.25, 0.75], vec![0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let out = average_predictions(&[p.clone(), p.clone()]).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn averaging_two_known_matrices() {
        let a = ScoreMatrix::probability(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let b = ScoreMatrix::probability(Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        let out = average_predictions(&[a, b]).unwrap();
        assert_eq!(out.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn averaging_shape_mismatch_is_rejected() {
        let a = ScoreMatrix::probability(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        let b = ScoreMatrix::probability(Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap())
            .unwrap();
        assert!(average_predictions(&[a, b]).is_err());
    }

    fn stack_table(seed: u64) -> FrameTable {
        // activity depends on f0 and f1; 6 participants
        let mut rng = seeded_rng(seed);
        let mut t = FrameTable::new(vec!["f0".into(), "f1".into(), "f2".into()], 3);
        for pid in 1..=6u32 {
            for s in 0..80u32 {
                let activity = rng.gen_range(0..3usize);
                let f0 = activity as f64 * 1.5 + rng.gen_range(-0.4..0.4);
                let f1 = (activity as f64 - 1.0).powi(2) + rng.gen_range(-0.3..0.3);
                let mut label = vec![0.0; 3];
                label[activity] = 1.0;
                t.rows.push(FrameRow {
                    participant_id: pid,
                    subsequence_id: 0,
                    second_index: s,
                    features: vec![f0, f1, rng.gen_range(-1.0..1.0)],
                    room: None,
                    soft_label: Some(label),
                });
            }
        }
        t
    }

    fn small_specs() -> Vec<LevelOneSpec> {
        vec![
            LevelOneSpec {
                name: "forest".into(),
                model: ModelSpec::Forest(ForestConfig {
                    n_trees: 10,
                    tree: TreeConfig {
                        max_depth: 4,
                        min_child_weight: 2.0,
                        ..TreeConfig::default()
                    },
                    ..ForestConfig::default()
                }),
            },
            LevelOneSpec {
                name: "nb".into(),
                model: ModelSpec::GaussianNb,
            },
            LevelOneSpec {
                name: "boost".into(),
                model: ModelSpec::Boost(BoostConfig {
                    n_rounds_max: 15,
                    learning_rate: 0.3,
                    tree: TreeConfig {
                        max_depth: 3,
                        min_child_weight: 1.0,
                        ..TreeConfig::default()
                    },
                    ..BoostConfig::default()
                }),
            },
        ]
    }

    fn small_stack_cfg() -> StackConfig {
        StackConfig {
            stacker_base: BoostConfig {
                n_rounds_max: 20,
                learning_rate: 0.3,
                early_stopping_rounds: 5,
                tree: TreeConfig {
                    max_depth: 3,
                    min_child_weight: 1.0,
                    ..TreeConfig::default()
                },
                ..BoostConfig::default()
            },
            seed: 3,
            ..StackConfig::default()
        }
    }

    #[test]
    fn single_spec_is_rejected() {
        let table = stack_table(1);
        let plan = participant_folds(&table.participants(), &[5, 6]).unwrap();
        let w = ClassWeights::uniform(3);
        let specs = vec![small_specs()[0].clone()];
        assert!(fit_stack(&specs, &plan, &table, &w, &small_stack_cfg()).is_err());
    }

    #[test]
    fn stack_fits_and_predicts_reasonably() {
        let table = stack_table(2);
        let plan = participant_folds(&table.participants(), &[5, 6]).unwrap();
        let w = ClassWeights::uniform(3);
        let (model, report) =
            fit_stack(&small_specs(), &plan, &table, &w, &small_stack_cfg()).unwrap();
        assert_eq!(model.level1.len(), 3);
        for (_, oof) in &report.oof {
            oof.audit_no_leakage().unwrap();
        }
        // stacker input column count = sum over specs of C
        assert_eq!(
            model.stacker.rounds[0][0].n_features,
            3 * 3
        );
        let best_single = report
            .level1_holdout_brier
            .iter()
            .map(|(_, b)| *b)
            .fold(f64::INFINITY, f64::min);
        assert!(
            report.stacked_holdout_brier <= best_single + 0.01,
            "stacked {} vs best single {best_single}",
            report.stacked_holdout_brier
        );
    }

    #[test]
    fn spec_order_does_not_change_the_metric_with_full_colsample() {
        let table = stack_table(4);
        let plan = participant_folds(&table.participants(), &[5, 6]).unwrap();
        let w = ClassWeights::uniform(3);
        let cfg = small_stack_cfg();
        let specs = small_specs();
        let mut permuted = specs.clone();
        permuted.rotate_left(1);
        let (_, a) = fit_stack(&specs, &plan, &table, &w, &cfg).unwrap();
        let (_, b) = fit_stack(&permuted, &plan, &table, &w, &cfg).unwrap();
        // per-spec OOF values are identical regardless of order
        let find = |report: &StackFitReport, name: &str| {
            report
                .oof
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, o)| o.values.clone())
                .unwrap()
        };
        for name in ["forest", "nb", "boost"] {
            assert_eq!(find(&a, name), find(&b, name), "spec {name}");
        }
        assert!(
            (a.stacked_holdout_brier - b.stacked_holdout_brier).abs() < 1e-9,
            "{} vs {}",
            a.stacked_holdout_brier,
            b.stacked_holdout_brier
        );
    }
}
