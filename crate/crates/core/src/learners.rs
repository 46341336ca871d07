//! Level-1 learners besides the booster: soft-label probability forests
//! (random-forest and extra-trees modes) and Gaussian naive Bayes.

use serde::{Deserialize, Serialize};

use crate::data::{ClassWeights, Matrix, ScoreMatrix, SoftLabelMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::{derive_seed, seeded_rng};
use crate::trees::{build_probability_tree, Tree, TreeConfig};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 50,
            bootstrap: true,
            tree: TreeConfig::default(),
        }
    }
}

impl ForestConfig {
    /// Extra-trees mode: random thresholds, no bootstrap.
    pub fn extra_trees(mut self) -> Self {
        self.tree.randomized_thresholds = true;
        self.bootstrap = false;
        self
    }
}

/// Ensemble of probability trees; predictions are the mean leaf
/// distribution over trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub config: ForestConfig,
}

/// Fit `n_trees` probability trees, each on its own bootstrap sample (or
/// the full data when bootstrap is off), with per-tree seed = seed + index.
pub fn fit_forest(
    x: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    cfg: &ForestConfig,
) -> Result<Forest> {
    if cfg.n_trees < 1 {
        return Err(Error::validation("n_trees must be >= 1"));
    }
    if labels.n_rows() != x.nrows() {
        return Err(Error::validation(format!(
            "{} label rows for {} feature rows",
            labels.n_rows(),
            x.nrows()
        )));
    }
    let n = x.nrows();
    let tree_ids: Vec<usize> = (0..cfg.n_trees).collect();
    let trees: Vec<Result<Tree>> = exec::map_collect(&tree_ids, |&t| {
        let mut tree_cfg = cfg.tree.clone();
        tree_cfg.seed = cfg.tree.seed.wrapping_add(t as u64);
        if cfg.bootstrap {
            let mut rng = seeded_rng(derive_seed(tree_cfg.seed, 0xB005));
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            build_probability_tree(x, labels, weights, &tree_cfg, Some(&sample))
        } else {
            build_probability_tree(x, labels, weights, &tree_cfg, None)
        }
    });
    let trees = trees.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        trees,
        config: cfg.clone(),
    })
}

/// Mean leaf distribution over all trees, per row.
pub fn forest_predict(forest: &Forest, x: &Matrix) -> Result<ScoreMatrix> {
    forest_predict_prefix(forest, x, forest.trees.len())
}

/// Mean over the first `n_trees` trees only (prefix of the ensemble).
pub fn forest_predict_prefix(forest: &Forest, x: &Matrix, n_trees: usize) -> Result<ScoreMatrix> {
    if n_trees == 0 || n_trees > forest.trees.len() {
        return Err(Error::validation(format!(
            "prefix {n_trees} outside 1..={}",
            forest.trees.len()
        )));
    }
    let trees = &forest.trees[..n_trees];
    let rows: Vec<Result<Vec<f64>>> = exec::map_range(x.nrows(), |r| {
        let features = x.row(r);
        let mut acc: Option<Vec<f64>> = None;
        for tree in trees {
            let dist = tree.predict_distribution(features)?;
            match acc.as_mut() {
                Some(acc) => {
                    for (a, &d) in acc.iter_mut().zip(dist) {
                        *a += d;
                    }
                }
                None => acc = Some(dist.to_vec()),
            }
        }
        let mut mean = acc.expect("n_trees >= 1");
        for v in &mut mean {
            *v /= n_trees as f64;
        }
        Ok(mean)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    ScoreMatrix::probability(Matrix::from_rows(&rows)?)
}

/// Variance floor for naive Bayes feature models.
pub const NB_VAR_FLOOR: f64 = 1e-9;

/// Per-class Gaussian feature model with class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub priors: Vec<f64>,
    /// C x F matrices of per-class feature means and variances.
    pub means: Matrix,
    pub variances: Matrix,
}

/// Maximum-likelihood Gaussian naive Bayes on hard labels.
///
/// Features must be complete (no NaN); the pipeline imputes missing lag and
/// lead cells with training-column means before calling this. A class
/// absent from training keeps prior 0 and is never predicted.
pub fn fit_gaussian_nb(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<GaussianNb> {
    if labels.len() != x.nrows() {
        return Err(Error::validation(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::validation("cannot fit on zero rows"));
    }
    if !x.all_finite() {
        return Err(Error::validation(
            "naive Bayes requires complete features; impute missing values first",
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::validation(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let f = x.ncols();
    let mut counts = vec![0usize; n_classes];
    let mut means = Matrix::zeros(n_classes, f);
    for (r, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (j, &v) in x.row(r).iter().enumerate() {
            means.set(c, j, means.get(c, j) + v);
        }
    }
    for c in 0..n_classes {
        if counts[c] == 0 {
            log::warn!("class {c} absent from naive Bayes training data; it will never be predicted");
            continue;
        }
        for j in 0..f {
            means.set(c, j, means.get(c, j) / counts[c] as f64);
        }
    }
    let mut variances = Matrix::zeros(n_classes, f);
    for (r, &c) in labels.iter().enumerate() {
        for (j, &v) in x.row(r).iter().enumerate() {
            let d = v - means.get(c, j);
            variances.set(c, j, variances.get(c, j) + d * d);
        }
    }
    for c in 0..n_classes {
        for j in 0..f {
            let var = if counts[c] > 0 {
                (variances.get(c, j) / counts[c] as f64).max(NB_VAR_FLOOR)
            } else {
                NB_VAR_FLOOR
            };
            variances.set(c, j, var);
        }
    }
    let n = labels.len() as f64;
    let priors: Vec<f64> = counts.iter().map(|&k| k as f64 / n).collect();
    Ok(GaussianNb {
        priors,
        means,
        variances,
    })
}

/// Posterior class probabilities via log densities, normalized with
/// log-sum-exp. Classes with prior 0 receive probability 0.
pub fn nb_predict(model: &GaussianNb, x: &Matrix) -> Result<ScoreMatrix> {
    let n_classes = model.priors.len();
    if x.ncols() != model.means.ncols() {
        return Err(Error::validation(format!(
            "feature arity {} does not match model arity {}",
            x.ncols(),
            model.means.ncols()
        )));
    }
    if !x.all_finite() {
        return Err(Error::validation(
            "naive Bayes prediction requires complete features",
        ));
    }
    let rows: Vec<Vec<f64>> = exec::map_range(x.nrows(), |r| {
        let features = x.row(r);
        let mut log_post = vec![f64::NEG_INFINITY; n_classes];
        for c in 0..n_classes {
            if model.priors[c] == 0.0 {
                continue;
            }
            let mut lp = model.priors[c].ln();
            for (j, &v) in features.iter().enumerate() {
                let mean = model.means.get(c, j);
                let var = model.variances.get(c, j);
                let d = v - mean;
                lp += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - d * d / (2.0 * var);
            }
            log_post[c] = lp;
        }
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; n_classes];
        let mut sum = 0.0;
        for c in 0..n_classes {
            if log_post[c].is_finite() {
                let e = (log_post[c] - max).exp();
                probs[c] = e;
                sum += e;
            }
        }
        for p in &mut probs {
            *p /= sum;
        }
        probs
    });
    ScoreMatrix::probability(Matrix::from_rows(&rows)?)
}

/// Per-column means of the finite entries; NaN columns fall back to 0.
pub fn column_means(x: &Matrix) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for r in 0..x.nrows() {
                let v = x.get(r, j);
                if !v.is_nan() {
                    sum += v;
                    count += 1;
                }
            }
            if count > 0 {
                sum / count as f64
            } else {
                0.0
            }
        })
        .collect()
}

/// Copy of `x` with every NaN cell replaced by the given per-column value.
pub fn impute_with(x: &Matrix, fill: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.nrows() {
        for j in 0..out.ncols() {
            if out.get(r, j).is_nan() {
                out.set(r, j, fill[j]);
            }
        }
    }
    out
}
