//! Single decision trees: second-order regression trees with Newton leaf
//! weights (the boosting base learner) and soft-label probability trees with
//! weighted Brier impurity (the forest base learner). Both learn a default
//! direction for missing values.

use serde::{Deserialize, Serialize};

use crate::data::{ClassWeights, Matrix, SoftLabelMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::seeded_rng;
use rand::seq::SliceRandom;
use rand::Rng;

/// Tree-growing parameters.
///
/// `min_child_weight` is the minimum Hessian sum per child for regression
/// trees and the minimum row count per child for probability trees.
/// `randomized_thresholds` selects extra-trees style splitting: one uniform
/// random threshold per candidate feature instead of an exhaustive scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: u32,
    pub min_child_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub colsample: f64,
    pub randomized_thresholds: bool,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 6,
            min_child_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            colsample: 1.0,
            randomized_thresholds: false,
            seed: 0,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::validation("max_depth must be >= 1"));
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return Err(Error::validation("colsample must be in (0,1]"));
        }
        if self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::validation("lambda and gamma must be >= 0"));
        }
        if self.min_child_weight < 0.0 {
            return Err(Error::validation("min_child_weight must be >= 0"));
        }
        Ok(())
    }
}

/// Leaf payload: a Newton weight for regression trees, a distribution for
/// probability trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeafValue {
    Scalar(f64),
    Distribution(Vec<f64>),
}

/// Child statistics stored on each split for later gain audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeStat {
    GradHess {
        grad: f64,
        hess: f64,
    },
    Impurity {
        impurity: f64,
        count: usize,
        class_sums: Vec<f64>,
        weighted_sq: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    /// Gain before the gamma penalty; splits require `gain > gamma`.
    pub gain: f64,
    pub left: usize,
    pub right: usize,
    pub left_stat: NodeStat,
    pub right_stat: NodeStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split(SplitNode),
    Leaf { value: LeafValue },
}

/// Binary decision tree over a fixed feature arity. Rows go left when
/// `x[feature] < threshold`; missing values follow `default_left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    pub n_features: usize,
}

impl Tree {
    /// Walk the tree for one row of features (NaN = missing).
    pub fn predict(&self, features: &[f64]) -> Result<&LeafValue> {
        if features.len() != self.n_features {
            return Err(Error::validation(format!(
                "feature arity {} does not match tree arity {}",
                features.len(),
                self.n_features
            )));
        }
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return Ok(value),
                Node::Split(split) => {
                    let x = features[split.feature];
                    let go_left = if x.is_nan() {
                        split.default_left
                    } else {
                        x < split.threshold
                    };
                    idx = if go_left { split.left } else { split.right };
                }
            }
        }
    }

    pub fn predict_scalar(&self, features: &[f64]) -> Result<f64> {
        match self.predict(features)? {
            LeafValue::Scalar(v) => Ok(*v),
            LeafValue::Distribution(_) => {
                Err(Error::validation("expected a regression tree"))
            }
        }
    }

    pub fn predict_distribution(&self, features: &[f64]) -> Result<&[f64]> {
        match self.predict(features)? {
            LeafValue::Distribution(d) => Ok(d),
            LeafValue::Scalar(_) => Err(Error::validation("expected a probability tree")),
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = &SplitNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split(s) => Some(s),
            Node::Leaf { .. } => None,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Relative slack distinguishing real gains from floating-point residue:
/// a pure node's impurity decrease computes to ~1e-16 * scale, not zero.
const MIN_GAIN_EPS: f64 = 1e-10;

fn min_useful_gain(gamma: f64, parent_scale: f64) -> f64 {
    gamma + MIN_GAIN_EPS * (1.0 + parent_scale.abs())
}

fn gain_term(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

fn newton_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        -g / denom
    } else {
        0.0
    }
}

/// Regression split gain from child statistics.
pub fn regression_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    0.5 * (gain_term(gl, hl, lambda) + gain_term(gr, hr, lambda)
        - gain_term(gl + gr, hl + hr, lambda))
}

/// Feature subset for one tree: `colsample` of the columns, sorted.
fn sample_features(n_features: usize, colsample: f64, rng: &mut impl Rng) -> Vec<usize> {
    if colsample >= 1.0 {
        return (0..n_features).collect();
    }
    let k = ((colsample * n_features as f64 + 1e-9).floor() as usize).max(1);
    let mut all: Vec<usize> = (0..n_features).collect();
    all.shuffle(rng);
    let mut chosen = all[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

/// Deterministic argmax: highest gain, then lowest feature, then lowest
/// threshold, then missing-left preferred.
fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.gain != b.gain {
        return a.gain > b.gain;
    }
    if a.feature != b.feature {
        return a.feature < b.feature;
    }
    if a.threshold != b.threshold {
        return a.threshold < b.threshold;
    }
    a.default_left && !b.default_left
}

fn pick_best(candidates: Vec<Option<Candidate>>) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for cand in candidates.into_iter().flatten() {
        best = match best {
            None => Some(cand),
            Some(b) => {
                if better(&cand, &b) {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

// ---------------------------------------------------------------------------
// Regression trees
// ---------------------------------------------------------------------------

struct RegressionContext<'a> {
    x: &'a Matrix,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TreeConfig,
    features: Vec<usize>,
    nodes: Vec<Node>,
}

/// Fit a second-order regression tree on the given rows.
///
/// Splits are exact greedy over sorted present values with midpoint
/// thresholds; missing rows are routed to whichever direction yields the
/// higher gain, recorded as the node's default direction.
pub fn build_regression_tree(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    cfg: &TreeConfig,
) -> Result<Tree> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    build_regression_tree_on(x, grad, hess, &rows, cfg)
}

pub fn build_regression_tree_on(
    x: &Matrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    cfg: &TreeConfig,
) -> Result<Tree> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::validation("cannot fit a tree on zero rows"));
    }
    if grad.len() != x.nrows() || hess.len() != x.nrows() {
        return Err(Error::validation(format!(
            "gradient/hessian length {}/{} does not match {} rows",
            grad.len(),
            hess.len(),
            x.nrows()
        )));
    }
    if hess.iter().any(|&h| h < 0.0) {
        return Err(Error::validation("hessian entries must be >= 0"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let features = sample_features(x.ncols(), cfg.colsample, &mut rng);
    let mut ctx = RegressionContext {
        x,
        grad,
        hess,
        cfg,
        features,
        nodes: Vec::new(),
    };
    grow_regression(&mut ctx, rows.to_vec(), 1);
    Ok(Tree {
        nodes: ctx.nodes,
        n_features: x.ncols(),
    })
}

fn grow_regression(ctx: &mut RegressionContext<'_>, rows: Vec<usize>, depth: u32) -> usize {
    let mut g_total = 0.0;
    let mut h_total = 0.0;
    for &r in &rows {
        g_total += ctx.grad[r];
        h_total += ctx.hess[r];
    }
    let make_leaf = |ctx: &mut RegressionContext<'_>| {
        let idx = ctx.nodes.len();
        ctx.nodes.push(Node::Leaf {
            value: LeafValue::Scalar(newton_weight(g_total, h_total, ctx.cfg.lambda)),
        });
        idx
    };

    if depth >= ctx.cfg.max_depth || rows.len() < 2 {
        return make_leaf(ctx);
    }

    let best = {
        let candidates = exec::map_collect(&ctx.features, |&f| {
            scan_regression_feature(ctx, &rows, f)
        });
        pick_best(candidates)
    };
    let Some(best) = best else {
        return make_leaf(ctx);
    };
    let parent_scale = gain_term(g_total, h_total, ctx.cfg.lambda);
    if best.gain <= min_useful_gain(ctx.cfg.gamma, parent_scale) {
        return make_leaf(ctx);
    }

    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    let mut left_stat = (0.0, 0.0);
    let mut right_stat = (0.0, 0.0);
    for &r in &rows {
        let v = ctx.x.get(r, best.feature);
        let go_left = if v.is_nan() {
            best.default_left
        } else {
            v < best.threshold
        };
        if go_left {
            left_rows.push(r);
            left_stat.0 += ctx.grad[r];
            left_stat.1 += ctx.hess[r];
        } else {
            right_rows.push(r);
            right_stat.0 += ctx.grad[r];
            right_stat.1 += ctx.hess[r];
        }
    }
    if left_rows.is_empty() || right_rows.is_empty() {
        return make_leaf(ctx);
    }

    let idx = ctx.nodes.len();
    // placeholder; children are attached after recursion
    ctx.nodes.push(Node::Leaf {
        value: LeafValue::Scalar(0.0),
    });
    let left = grow_regression(ctx, left_rows, depth + 1);
    let right = grow_regression(ctx, right_rows, depth + 1);
    ctx.nodes[idx] = Node::Split(SplitNode {
        feature: best.feature,
        threshold: best.threshold,
        default_left: best.default_left,
        gain: best.gain,
        left,
        right,
        left_stat: NodeStat::GradHess {
            grad: left_stat.0,
            hess: left_stat.1,
        },
        right_stat: NodeStat::GradHess {
            grad: right_stat.0,
            hess: right_stat.1,
        },
    });
    idx
}

fn scan_regression_feature(
    ctx: &RegressionContext<'_>,
    rows: &[usize],
    feature: usize,
) -> Option<Candidate> {
    let mut present: Vec<(f64, f64, f64)> = Vec::with_capacity(rows.len());
    let mut g_miss = 0.0;
    let mut h_miss = 0.0;
    let mut any_missing = false;
    for &r in rows {
        let v = ctx.x.get(r, feature);
        if v.is_nan() {
            g_miss += ctx.grad[r];
            h_miss += ctx.hess[r];
            any_missing = true;
        } else {
            present.push((v, ctx.grad[r], ctx.hess[r]));
        }
    }
    if present.len() < 2 {
        return None;
    }
    present.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let g_present: f64 = present.iter().map(|p| p.1).sum();
    let h_present: f64 = present.iter().map(|p| p.2).sum();
    let lambda = ctx.cfg.lambda;
    let mcw = ctx.cfg.min_child_weight;

    let mut best: Option<Candidate> = None;
    if any_missing {
        // separator: all missing left, all present right — threshold at the
        // smallest present value, "missing goes left" as the learned rule
        if h_miss >= mcw && h_present >= mcw {
            let gain = regression_gain(g_miss, h_miss, g_present, h_present, lambda);
            best = Some(Candidate {
                gain,
                feature,
                threshold: present[0].0,
                default_left: true,
            });
        }
    }
    let mut gl = 0.0;
    let mut hl = 0.0;
    for i in 0..present.len() - 1 {
        gl += present[i].1;
        hl += present[i].2;
        let (v, v_next) = (present[i].0, present[i + 1].0);
        if v >= v_next {
            continue;
        }
        let threshold = v / 2.0 + v_next / 2.0;
        if !(v < threshold && threshold <= v_next) {
            // adjacent representable values: no usable midpoint
            continue;
        }
        let gr = g_present - gl;
        let hr = h_present - hl;
        let routings: &[bool] = if any_missing {
            &[true, false]
        } else {
            &[true]
        };
        for &missing_left in routings {
            let (cl_g, cl_h, cr_g, cr_h) = if missing_left {
                (gl + g_miss, hl + h_miss, gr, hr)
            } else {
                (gl, hl, gr + g_miss, hr + h_miss)
            };
            if cl_h < mcw || cr_h < mcw {
                continue;
            }
            let gain = regression_gain(cl_g, cl_h, cr_g, cr_h, lambda);
            let cand = Candidate {
                gain,
                feature,
                threshold,
                default_left: missing_left,
            };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Probability trees
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct ClassStats {
    count: usize,
    sums: Vec<f64>,
    /// sum over rows and classes of w_c * y^2
    weighted_sq: f64,
}

impl ClassStats {
    fn new(n_classes: usize) -> Self {
        ClassStats {
            count: 0,
            sums: vec![0.0; n_classes],
            weighted_sq: 0.0,
        }
    }

    fn add_row(&mut self, y: &[f64], w: &[f64]) {
        self.count += 1;
        for (c, &v) in y.iter().enumerate() {
            self.sums[c] += v;
            self.weighted_sq += w[c] * v * v;
        }
    }

    fn merge(&self, other: &ClassStats) -> ClassStats {
        ClassStats {
            count: self.count + other.count,
            sums: self
                .sums
                .iter()
                .zip(&other.sums)
                .map(|(a, b)| a + b)
                .collect(),
            weighted_sq: self.weighted_sq + other.weighted_sq,
        }
    }

    /// Weighted Brier impurity: sum_n sum_c w_c (y - mean)^2.
    fn impurity(&self, w: &[f64]) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mut mean_part = 0.0;
        for (c, &s) in self.sums.iter().enumerate() {
            mean_part += w[c] * s * s;
        }
        self.weighted_sq - mean_part / n
    }

    fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sums.iter().map(|s| s / n).collect()
    }
}

struct ProbabilityContext<'a> {
    x: &'a Matrix,
    labels: &'a SoftLabelMatrix,
    weights: &'a [f64],
    cfg: &'a TreeConfig,
    features: Vec<usize>,
    nodes: Vec<Node>,
}

/// Fit a probability-estimation tree: leaves hold mean soft labels, splits
/// maximize the decrease of weighted Brier impurity. Missing values are
/// routed with the majority of present rows (ties left). `bootstrap`, when
/// given, is the (possibly repeating) multiset of row indices to fit on.
pub fn build_probability_tree(
    x: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    cfg: &TreeConfig,
    bootstrap: Option<&[usize]>,
) -> Result<Tree> {
    cfg.validate()?;
    if labels.n_rows() != x.nrows() {
        return Err(Error::validation(format!(
            "{} label rows for {} feature rows",
            labels.n_rows(),
            x.nrows()
        )));
    }
    if weights.n_classes() != labels.n_classes() {
        return Err(Error::validation("class weight arity mismatch"));
    }
    let rows: Vec<usize> = match bootstrap {
        Some(idx) => {
            if idx.is_empty() {
                return Err(Error::validation("empty bootstrap sample"));
            }
            if let Some(&bad) = idx.iter().find(|&&r| r >= x.nrows()) {
                return Err(Error::validation(format!(
                    "bootstrap index {bad} out of range"
                )));
            }
            idx.to_vec()
        }
        None => (0..x.nrows()).collect(),
    };
    if rows.is_empty() {
        return Err(Error::validation("cannot fit a tree on zero rows"));
    }
    let mut rng = seeded_rng(cfg.seed);
    let features = sample_features(x.ncols(), cfg.colsample, &mut rng);
    let mut ctx = ProbabilityContext {
        x,
        labels,
        weights: weights.as_slice(),
        cfg,
        features,
        nodes: Vec::new(),
    };
    grow_probability(&mut ctx, rows, 1, &mut rng);
    Ok(Tree {
        nodes: ctx.nodes,
        n_features: x.ncols(),
    })
}

fn grow_probability(
    ctx: &mut ProbabilityContext<'_>,
    rows: Vec<usize>,
    depth: u32,
    rng: &mut impl Rng,
) -> usize {
    let n_classes = ctx.labels.n_classes();
    let mut stats = ClassStats::new(n_classes);
    for &r in &rows {
        stats.add_row(ctx.labels.row(r), ctx.weights);
    }
    let make_leaf = |ctx: &mut ProbabilityContext<'_>| {
        let idx = ctx.nodes.len();
        ctx.nodes.push(Node::Leaf {
            value: LeafValue::Distribution(stats.mean()),
        });
        idx
    };

    if depth >= ctx.cfg.max_depth || rows.len() < 2 {
        return make_leaf(ctx);
    }

    // randomized thresholds are drawn sequentially (in feature order) so the
    // parallel evaluation below cannot perturb the rng stream
    let random_thresholds: Option<Vec<Option<f64>>> = if ctx.cfg.randomized_thresholds {
        Some(
            ctx.features
                .iter()
                .map(|&f| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for &r in &rows {
                        let v = ctx.x.get(r, f);
                        if !v.is_nan() {
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                    if lo < hi {
                        Some(rng.gen_range(lo..hi))
                    } else {
                        None
                    }
                })
                .collect(),
        )
    } else {
        None
    };

    let best = {
        let feats = ctx.features.clone();
        let candidates = exec::map_range(feats.len(), |i| {
            let f = feats[i];
            match &random_thresholds {
                Some(thresholds) => thresholds[i]
                    .and_then(|t| evaluate_probability_threshold(ctx, &rows, f, t)),
                None => scan_probability_feature(ctx, &rows, f),
            }
        });
        pick_best(candidates)
    };
    let Some(best) = best else {
        return make_leaf(ctx);
    };
    if best.gain <= min_useful_gain(ctx.cfg.gamma, stats.impurity(ctx.weights)) {
        return make_leaf(ctx);
    }

    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    for &r in &rows {
        let v = ctx.x.get(r, best.feature);
        let go_left = if v.is_nan() {
            best.default_left
        } else {
            v < best.threshold
        };
        if go_left {
            left_rows.push(r);
        } else {
            right_rows.push(r);
        }
    }
    if left_rows.is_empty() || right_rows.is_empty() {
        return make_leaf(ctx);
    }
    let mut left_stats = ClassStats::new(n_classes);
    for &r in &left_rows {
        left_stats.add_row(ctx.labels.row(r), ctx.weights);
    }
    let mut right_stats = ClassStats::new(n_classes);
    for &r in &right_rows {
        right_stats.add_row(ctx.labels.row(r), ctx.weights);
    }

    let idx = ctx.nodes.len();
    ctx.nodes.push(Node::Leaf {
        value: LeafValue::Scalar(0.0),
    });
    let left = grow_probability(ctx, left_rows, depth + 1, rng);
    let right = grow_probability(ctx, right_rows, depth + 1, rng);
    ctx.nodes[idx] = Node::Split(SplitNode {
        feature: best.feature,
        threshold: best.threshold,
        default_left: best.default_left,
        gain: best.gain,
        left,
        right,
        left_stat: NodeStat::Impurity {
            impurity: left_stats.impurity(ctx.weights),
            count: left_stats.count,
            class_sums: left_stats.sums.clone(),
            weighted_sq: left_stats.weighted_sq,
        },
        right_stat: NodeStat::Impurity {
            impurity: right_stats.impurity(ctx.weights),
            count: right_stats.count,
            class_sums: right_stats.sums.clone(),
            weighted_sq: right_stats.weighted_sq,
        },
    });
    idx
}

fn split_probability_rows(
    ctx: &ProbabilityContext<'_>,
    rows: &[usize],
    feature: usize,
) -> (Vec<(f64, usize)>, ClassStats) {
    let n_classes = ctx.labels.n_classes();
    let mut present: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
    let mut missing = ClassStats::new(n_classes);
    for &r in rows {
        let v = ctx.x.get(r, feature);
        if v.is_nan() {
            missing.add_row(ctx.labels.row(r), ctx.weights);
        } else {
            present.push((v, r));
        }
    }
    present.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    (present, missing)
}

fn probability_candidate(
    ctx: &ProbabilityContext<'_>,
    parent_impurity: f64,
    left: &ClassStats,
    right: &ClassStats,
    missing: &ClassStats,
    feature: usize,
    threshold: f64,
) -> Option<Candidate> {
    // missing rows join the majority side of the present rows, ties left
    let missing_left = left.count >= right.count;
    let (final_left, final_right) = if missing.count > 0 {
        if missing_left {
            (left.merge(missing), right.clone())
        } else {
            (left.clone(), right.merge(missing))
        }
    } else {
        (left.clone(), right.clone())
    };
    let mcw = ctx.cfg.min_child_weight;
    if (final_left.count as f64) < mcw || (final_right.count as f64) < mcw {
        return None;
    }
    if final_left.count == 0 || final_right.count == 0 {
        return None;
    }
    let gain = parent_impurity
        - final_left.impurity(ctx.weights)
        - final_right.impurity(ctx.weights);
    Some(Candidate {
        gain,
        feature,
        threshold,
        default_left: missing_left,
    })
}

fn scan_probability_feature(
    ctx: &ProbabilityContext<'_>,
    rows: &[usize],
    feature: usize,
) -> Option<Candidate> {
    let (present, missing) = split_probability_rows(ctx, rows, feature);
    if present.len() < 2 {
        return None;
    }
    let n_classes = ctx.labels.n_classes();
    let mut total = ClassStats::new(n_classes);
    for &(_, r) in &present {
        total.add_row(ctx.labels.row(r), ctx.weights);
    }
    let parent = total.merge(&missing);
    let parent_impurity = parent.impurity(ctx.weights);

    let mut best: Option<Candidate> = None;
    if missing.count > 0 {
        let mcw = ctx.cfg.min_child_weight;
        if missing.count as f64 >= mcw && total.count as f64 >= mcw {
            let gain = parent_impurity
                - missing.impurity(ctx.weights)
                - total.impurity(ctx.weights);
            best = Some(Candidate {
                gain,
                feature,
                threshold: present[0].0,
                default_left: true,
            });
        }
    }
    let mut left = ClassStats::new(n_classes);
    for i in 0..present.len() - 1 {
        left.add_row(ctx.labels.row(present[i].1), ctx.weights);
        let (v, v_next) = (present[i].0, present[i + 1].0);
        if v >= v_next {
            continue;
        }
        let threshold = v / 2.0 + v_next / 2.0;
        if !(v < threshold && threshold <= v_next) {
            continue;
        }
        let right = ClassStats {
            count: total.count - left.count,
            sums: total
                .sums
                .iter()
                .zip(&left.sums)
                .map(|(t, l)| t - l)
                .collect(),
            weighted_sq: total.weighted_sq - left.weighted_sq,
        };
        if let Some(cand) = probability_candidate(
            ctx,
            parent_impurity,
            &left,
            &right,
            &missing,
            feature,
            threshold,
        ) {
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    best
}

fn evaluate_probability_threshold(
    ctx: &ProbabilityContext<'_>,
    rows: &[usize],
    feature: usize,
    threshold: f64,
) -> Option<Candidate> {
    let (present, missing) = split_probability_rows(ctx, rows, feature);
    if present.len() < 2 {
        return None;
    }
    let n_classes = ctx.labels.n_classes();
    let mut left = ClassStats::new(n_classes);
    let mut right = ClassStats::new(n_classes);
    for &(v, r) in &present {
        if v < threshold {
            left.add_row(ctx.labels.row(r), ctx.weights);
        } else {
            right.add_row(ctx.labels.row(r), ctx.weights);
        }
    }
    if left.count == 0 || right.count == 0 {
        return None;
    }
    let parent = left.merge(&right).merge(&missing);
    let parent_impurity = parent.impurity(ctx.weights);
    probability_candidate(
        ctx,
        parent_impurity,
        &left,
        &right,
        &missing,
        feature,
        threshold,
    )
}

// ---------------------------------------------------------------------------
// Importance and audits
// ---------------------------------------------------------------------------

/// Per-feature total split gain across trees, normalized to sum 1,
/// descending, ties broken by name.
pub fn feature_importance(trees: &[Tree], names: &[String]) -> Result<Vec<(String, f64)>> {
    if trees.is_empty() {
        return Err(Error::validation("feature_importance needs >= 1 tree"));
    }
    let mut totals = vec![0.0f64; names.len()];
    for tree in trees {
        if tree.n_features != names.len() {
            return Err(Error::validation(format!(
                "tree arity {} does not match {} names",
                tree.n_features,
                names.len()
            )));
        }
        for split in tree.splits() {
            totals[split.feature] += split.gain;
        }
    }
    let total: f64 = totals.iter().sum();
    let mut out: Vec<(String, f64)> = names
        .iter()
        .cloned()
        .zip(totals.iter().map(|&g| if total > 0.0 { g / total } else { 0.0 }))
        .collect();
    out.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(out)
}

/// Two-column importance report. Importance metric: total split gain.
pub fn format_importance_table(importance: &[(String, f64)], top: usize) -> String {
    let width = importance
        .iter()
        .take(top)
        .map(|(name, _)| name.len())
        .max()
        .unwrap_or(12)
        .max("Feature name".len());
    let mut out = String::new();
    out.push_str("importance metric: total split gain\n");
    out.push_str(&format!(
        "{:<width$} | Importance (%)\n",
        "Feature name",
        width = width
    ));
    for (name, share) in importance.iter().take(top) {
        out.push_str(&format!(
            "{:<width$} | {:.4}\n",
            name,
            share * 100.0,
            width = width
        ));
    }
    out
}

/// Recheck every stored split: the gain recomputed from child statistics
/// must equal the stored gain and exceed gamma. Weights are required for
/// probability trees and ignored for regression trees.
pub fn audit_split_gains(
    tree: &Tree,
    lambda: f64,
    gamma: f64,
    weights: Option<&ClassWeights>,
) -> Result<()> {
    for (i, split) in tree.splits().enumerate() {
        let recomputed = match (&split.left_stat, &split.right_stat) {
            (
                NodeStat::GradHess { grad: gl, hess: hl },
                NodeStat::GradHess { grad: gr, hess: hr },
            ) => regression_gain(*gl, *hl, *gr, *hr, lambda),
            (
                NodeStat::Impurity {
                    impurity: il,
                    count: nl,
                    class_sums: sl,
                    weighted_sq: ql,
                },
                NodeStat::Impurity {
                    impurity: ir,
                    count: nr,
                    class_sums: sr,
                    weighted_sq: qr,
                },
            ) => {
                let w = weights
                    .ok_or_else(|| {
                        Error::validation("probability-tree audit requires class weights")
                    })?
                    .as_slice();
                let n = (nl + nr) as f64;
                let mut mean_part = 0.0;
                for c in 0..w.len() {
                    let s = sl[c] + sr[c];
                    mean_part += w[c] * s * s;
                }
                let parent_impurity = ql + qr - mean_part / n;
                parent_impurity - il - ir
            }
            _ => return Err(Error::validation("mixed split statistics in one tree")),
        };
        if (recomputed - split.gain).abs() > 1e-6 * (1.0 + split.gain.abs()) {
            return Err(Error::validation(format!(
                "split {i}: stored gain {} differs from recomputed {recomputed}",
                split.gain
            )));
        }
        if recomputed + 1e-9 < gamma {
            return Err(Error::validation(format!(
                "split {i}: gain {recomputed} below gamma {gamma}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn constant_gradients_make_a_single_leaf() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let g = vec![0.5; 4];
        let h = vec![1.0; 4];
        let cfg = TreeConfig {
            min_child_weight: 0.0,
            lambda: 0.5,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let expected = -2.0 / 4.5; // -G/(H+lambda)
        assert!((tree.predict_scalar(&[9.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sign_split_is_recovered() {
        // g = -1 for x<0, +1 for x>=0: a single split at 0 separates signs.
        let xs: Vec<f64> = vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let x = matrix(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let g: Vec<f64> = xs.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
        let h = vec![1.0; xs.len()];
        let cfg = TreeConfig {
            max_depth: 2,
            min_child_weight: 0.0,
            lambda: 0.0,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        let split = tree.splits().next().expect("root split");
        assert!(split.threshold > -1.0 && split.threshold <= 1.0);
        // leaf weights are -G/H = +1 on the left (negative g), -1 on the right
        assert!((tree.predict_scalar(&[-5.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((tree.predict_scalar(&[5.0]).unwrap() + 1.0).abs() < 1e-12);
        // brute force over all midpoints: no candidate beats the chosen gain
        let mut best = f64::NEG_INFINITY;
        for i in 0..xs.len() - 1 {
            let (gl, hl): (f64, f64) = (g[..=i].iter().sum(), h[..=i].iter().sum());
            let (gr, hr): (f64, f64) = (g[i + 1..].iter().sum(), h[i + 1..].iter().sum());
            best = best.max(regression_gain(gl, hl, gr, hr, 0.0));
        }
        assert!((split.gain - best).abs() < 1e-12);
    }

    #[test]
    fn min_child_weight_forces_a_leaf() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0]]);
        let g = vec![-1.0, 0.0, 1.0];
        let h = vec![1.0; 3];
        let cfg = TreeConfig {
            min_child_weight: 10.0,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn missing_rows_get_a_learned_default() {
        // missing rows share the gradient of the x>=0.5 group, so routing
        // them right yields the higher gain and becomes the default
        let x = matrix(&[
            vec![0.0],
            vec![0.0],
            vec![1.0],
            vec![1.0],
            vec![f64::NAN],
            vec![f64::NAN],
        ]);
        let g = vec![-1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        let h = vec![1.0; 6];
        let cfg = TreeConfig {
            min_child_weight: 0.0,
            lambda: 0.0,
            max_depth: 2,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        let split = tree.splits().next().expect("root split");
        assert!(!split.default_left);
        let miss = tree.predict_scalar(&[f64::NAN]).unwrap();
        assert!((miss + 1.0).abs() < 1e-12);
        assert!((tree.predict_scalar(&[0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_rejected() {
        let x = Matrix::zeros(0, 1);
        assert!(build_regression_tree(&x, &[], &[], &TreeConfig::default()).is_err());
    }

    fn soft(rows: &[Vec<f64>]) -> SoftLabelMatrix {
        SoftLabelMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn pure_node_is_a_single_leaf() {
        let x = matrix(&[vec![1.0], vec![2.0], vec![3.0]]);
        let y = soft(&vec![vec![0.3, 0.7]; 3]);
        let w = ClassWeights::uniform(2);
        let cfg = TreeConfig {
            min_child_weight: 1.0,
            ..TreeConfig::default()
        };
        let tree = build_probability_tree(&x, &y, &w, &cfg, None).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let d = tree.predict_distribution(&[5.0]).unwrap();
        assert!((d[0] - 0.3).abs() < 1e-12 && (d[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn two_pure_groups_are_separated() {
        let x = matrix(&[vec![0.0], vec![0.5], vec![1.0], vec![4.0], vec![4.5], vec![5.0]]);
        let y = soft(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let w = ClassWeights::uniform(2);
        let cfg = TreeConfig {
            max_depth: 2,
            min_child_weight: 1.0,
            ..TreeConfig::default()
        };
        let tree = build_probability_tree(&x, &y, &w, &cfg, None).unwrap();
        let split = tree.splits().next().expect("root split");
        assert!(split.threshold > 1.0 && split.threshold <= 4.0);
        assert_eq!(tree.predict_distribution(&[0.2]).unwrap(), &[1.0, 0.0]);
        assert_eq!(tree.predict_distribution(&[4.9]).unwrap(), &[0.0, 1.0]);
        // brute-force impurity scan agrees with the chosen gain
        audit_split_gains(&tree, 0.0, 0.0, Some(&w)).unwrap();
    }

    #[test]
    fn randomized_thresholds_are_deterministic_per_seed() {
        let x = matrix(&(0..40).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect::<Vec<_>>());
        let labels: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                if i < 20 {
                    vec![1.0, 0.0]
                } else {
                    vec![0.0, 1.0]
                }
            })
            .collect();
        let y = soft(&labels);
        let w = ClassWeights::uniform(2);
        let cfg = TreeConfig {
            randomized_thresholds: true,
            seed: 9,
            min_child_weight: 1.0,
            ..TreeConfig::default()
        };
        let a = build_probability_tree(&x, &y, &w, &cfg, None).unwrap();
        let b = build_probability_tree(&x, &y, &w, &cfg, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probability_leaves_are_distributions() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        let y = soft(&[
            vec![0.6, 0.4],
            vec![0.4, 0.6],
            vec![0.1, 0.9],
            vec![0.9, 0.1],
        ]);
        let w = ClassWeights::uniform(2);
        let tree = build_probability_tree(
            &x,
            &y,
            &w,
            &TreeConfig {
                min_child_weight: 1.0,
                ..TreeConfig::default()
            },
            None,
        )
        .unwrap();
        for v in [0.0, 1.5, 2.5, 99.0] {
            let d = tree.predict_distribution(&[v]).unwrap();
            let sum: f64 = d.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn missingness_encoding_target_yields_pure_children() {
        // missing iff class 1: sparsity-aware routing gets both children pure
        let x = matrix(&[
            vec![1.0],
            vec![2.0],
            vec![3.0],
            vec![f64::NAN],
            vec![f64::NAN],
        ]);
        let y = soft(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]);
        let w = ClassWeights::uniform(2);
        let cfg = TreeConfig {
            max_depth: 2,
            min_child_weight: 1.0,
            ..TreeConfig::default()
        };
        let tree = build_probability_tree(&x, &y, &w, &cfg, None).unwrap();
        let split = tree.splits().next().expect("root split");
        match (&split.left_stat, &split.right_stat) {
            (
                NodeStat::Impurity { impurity: il, .. },
                NodeStat::Impurity { impurity: ir, .. },
            ) => {
                assert!(il.abs() < 1e-12 && ir.abs() < 1e-12);
            }
            _ => panic!("expected impurity stats"),
        }
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let x = matrix(&[vec![1.0], vec![2.0]]);
        let g = vec![1.0, -1.0];
        let h = vec![1.0, 1.0];
        let tree = build_regression_tree(&x, &g, &h, &TreeConfig::default()).unwrap();
        assert!(tree.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn all_missing_row_follows_defaults() {
        let x = matrix(&[vec![1.0, 10.0], vec![2.0, 20.0], vec![3.0, 30.0], vec![4.0, 40.0]]);
        let g = vec![-1.0, -1.0, 1.0, 1.0];
        let h = vec![1.0; 4];
        let cfg = TreeConfig {
            min_child_weight: 0.0,
            lambda: 0.0,
            max_depth: 3,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        // no missing during training: defaults are left everywhere
        let v = tree.predict_scalar(&[f64::NAN, f64::NAN]).unwrap();
        assert!(v.is_finite());
        assert!((v - 1.0).abs() < 1e-12); // left path twice lands in g=-1 leaf
    }

    #[test]
    fn importance_concentrates_on_the_split_feature() {
        let x = matrix(&[
            vec![0.0, 5.0],
            vec![1.0, 5.0],
            vec![2.0, 5.0],
            vec![3.0, 5.0],
        ]);
        let g = vec![-1.0, -1.0, 1.0, 1.0];
        let h = vec![1.0; 4];
        let cfg = TreeConfig {
            min_child_weight: 0.0,
            lambda: 0.0,
            max_depth: 3,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        let names = vec!["informative".to_string(), "constant".to_string()];
        let imp = feature_importance(std::slice::from_ref(&tree), &names).unwrap();
        assert_eq!(imp[0].0, "informative");
        assert!((imp[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(imp[1].1, 0.0);
        let table = format_importance_table(&imp, 15);
        assert!(table.contains("total split gain"));
        assert!(table.contains("informative"));
    }

    #[test]
    fn regression_audit_passes_on_fitted_tree() {
        let xs: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let x = matrix(&xs);
        let g: Vec<f64> = (0..50).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let h = vec![1.0; 50];
        let cfg = TreeConfig {
            max_depth: 4,
            min_child_weight: 0.5,
            lambda: 1.0,
            gamma: 0.01,
            ..TreeConfig::default()
        };
        let tree = build_regression_tree(&x, &g, &h, &cfg).unwrap();
        audit_split_gains(&tree, cfg.lambda, cfg.gamma, None).unwrap();
    }
}
