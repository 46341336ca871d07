//! Training objectives and the evaluation metric: weighted Brier score,
//! softmax Brier loss with analytic gradient and diagonal Hessian, a softmax
//! logloss baseline, and the resolution-K hard-target approximation.

use serde::{Deserialize, Serialize};

use crate::data::{
    ClassWeights, FrameTable, Matrix, ScoreKind, ScoreMatrix, SoftLabelMatrix,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::numeric::{pairwise_sum, resolution_floor};

/// Default positivity floor for diagonal Hessian entries. The softmax Brier
/// loss is non-convex, so per-coordinate second partials can be negative;
/// clamping at a tiny positive value keeps Newton leaf weights finite.
pub const DEFAULT_HESS_MIN: f64 = 1e-16;

/// Per-entry gradient and (floored) diagonal Hessian of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradHess {
    pub grad: Matrix,
    pub hess: Matrix,
}

/// Resolution parameter for the hard-target duplication scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    k: u32,
}

impl Resolution {
    pub fn new(k: u32) -> Result<Self> {
        if k < 1 {
            return Err(Error::validation("resolution k must be >= 1"));
        }
        Ok(Resolution { k })
    }

    pub fn get(self) -> u32 {
        self.k
    }
}

/// How remainders are assigned when duplicating rows at resolution K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DuplicationMode {
    /// floor(K * y_c) copies per class; a row can lose mass and may produce
    /// fewer than K copies (or none).
    Floor,
    /// Exactly K copies per row; leftover copies go to the classes with the
    /// largest fractional parts, ties to the lower class index.
    LargestRemainder,
}

/// Softmax each row of `raw` in place, with row-max subtraction.
pub(crate) fn softmax_rows_matrix(raw: &Matrix) -> Matrix {
    let ncols = raw.ncols();
    let mut out = raw.clone();
    exec::for_each_chunk_mut(out.data_mut(), ncols, |_, row| {
        softmax_in_place(row);
    });
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a raw score matrix.
pub fn softmax_rows(raw: &ScoreMatrix) -> Result<ScoreMatrix> {
    if raw.kind() != ScoreKind::Raw {
        return Err(Error::validation(
            "softmax_rows expects a raw score matrix",
        ));
    }
    ScoreMatrix::probability(softmax_rows_matrix(raw.values()))
}

fn check_shapes(
    n_rows: usize,
    n_classes: usize,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> Result<()> {
    if labels.n_rows() != n_rows || labels.n_classes() != n_classes {
        return Err(Error::validation(format!(
            "label shape {}x{} does not match scores {}x{}",
            labels.n_rows(),
            labels.n_classes(),
            n_rows,
            n_classes
        )));
    }
    if weights.n_classes() != n_classes {
        return Err(Error::validation(format!(
            "{} class weights for {} classes",
            weights.n_classes(),
            n_classes
        )));
    }
    Ok(())
}

pub(crate) fn brier_score_matrix(
    probs: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> f64 {
    let w = weights.as_slice();
    let row_terms = exec::map_range(probs.nrows(), |r| {
        let p = probs.row(r);
        let y = labels.row(r);
        let mut acc = 0.0;
        for c in 0..p.len() {
            let d = p[c] - y[c];
            acc += w[c] * d * d;
        }
        acc
    });
    pairwise_sum(&row_terms) / probs.nrows() as f64
}

/// Weighted Brier score: `(1/N) sum_n sum_c w_c (P[n,c] - Y[n,c])^2`.
/// Zero iff the predictions equal the targets.
pub fn brier_score(
    probs: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> Result<f64> {
    if probs.kind() != ScoreKind::Probability {
        return Err(Error::validation("brier_score expects probabilities"));
    }
    check_shapes(probs.n_rows(), probs.n_classes(), labels, weights)?;
    Ok(brier_score_matrix(probs.values(), labels, weights))
}

/// Softmax Brier loss: exactly `brier_score(softmax_rows(raw), ..)`.
pub fn brier_loss(
    raw: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> Result<f64> {
    let probs = softmax_rows(raw)?;
    brier_score(&probs, labels, weights)
}

/// Analytic gradient and diagonal Hessian of the softmax Brier loss with
/// respect to the raw scores, per instance.
///
/// For row `n` with probabilities `s = softmax(raw[n])`:
///
/// ```text
/// d l_n / d p_c0   = 2 s_c0 [ w_c0 (s_c0 - y_c0) - S ]
/// d2 l_n / d p_c0^2 = 2 s_c0 [ (1 - s_c0)(w_c0 (s_c0 - y_c0) - S)
///                              + w_c0 s_c0 (1 - s_c0)
///                              - w_c0 s_c0 (2 s_c0 - y_c0) + s_c0 U ]
/// S = sum_c w_c (s_c - y_c) s_c,   U = sum_c w_c s_c (2 s_c - y_c)
/// ```
///
/// both divided by N to match the loss. Hessian entries are clamped below
/// at `hess_min` after computation.
pub fn brier_grad_hess(
    raw: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> Result<GradHess> {
    brier_grad_hess_with_floor(raw, labels, weights, DEFAULT_HESS_MIN)
}

pub fn brier_grad_hess_with_floor(
    raw: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    hess_min: f64,
) -> Result<GradHess> {
    if raw.kind() != ScoreKind::Raw {
        return Err(Error::validation("brier_grad_hess expects raw scores"));
    }
    let n = raw.n_rows();
    let n_classes = raw.n_classes();
    check_shapes(n, n_classes, labels, weights)?;
    let w = weights.as_slice();
    let inv_n = 1.0 / n as f64;

    let rows: Vec<(Vec<f64>, Vec<f64>)> = exec::map_range(n, |r| {
        let mut probs = raw.row(r).to_vec();
        softmax_in_place(&mut probs);
        let y = labels.row(r);
        let mut s_term = 0.0;
        let mut u_term = 0.0;
        for c in 0..n_classes {
            s_term += w[c] * (probs[c] - y[c]) * probs[c];
            u_term += w[c] * probs[c] * (2.0 * probs[c] - y[c]);
        }
        let mut grad = vec![0.0; n_classes];
        let mut hess = vec![0.0; n_classes];
        for c in 0..n_classes {
            let s = probs[c];
            let inner = w[c] * (s - y[c]) - s_term;
            grad[c] = 2.0 * s * inner * inv_n;
            let h = 2.0
                * s
                * ((1.0 - s) * inner + w[c] * s * (1.0 - s) - w[c] * s * (2.0 * s - y[c])
                    + s * u_term);
            hess[c] = (h * inv_n).max(hess_min);
        }
        (grad, hess)
    });

    assemble_grad_hess(rows, n, n_classes)
}

/// Gradient and diagonal Hessian of the softmax logloss
/// `sum_n sum_c -Y[n,c] ln sigma[n,c]` (no 1/N factor): `grad = sigma - Y`,
/// `hess = sigma (1 - sigma)`. Consumes soft targets directly.
pub fn logloss_grad_hess(raw: &ScoreMatrix, labels: &SoftLabelMatrix) -> Result<GradHess> {
    logloss_grad_hess_with_floor(raw, labels, DEFAULT_HESS_MIN)
}

pub fn logloss_grad_hess_with_floor(
    raw: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    hess_min: f64,
) -> Result<GradHess> {
    if raw.kind() != ScoreKind::Raw {
        return Err(Error::validation("logloss_grad_hess expects raw scores"));
    }
    let n = raw.n_rows();
    let n_classes = raw.n_classes();
    if labels.n_rows() != n || labels.n_classes() != n_classes {
        return Err(Error::validation(format!(
            "label shape {}x{} does not match scores {}x{}",
            labels.n_rows(),
            labels.n_classes(),
            n,
            n_classes
        )));
    }

    let rows: Vec<(Vec<f64>, Vec<f64>)> = exec::map_range(n, |r| {
        let mut probs = raw.row(r).to_vec();
        softmax_in_place(&mut probs);
        let y = labels.row(r);
        let grad: Vec<f64> = (0..n_classes).map(|c| probs[c] - y[c]).collect();
        let hess: Vec<f64> = (0..n_classes)
            .map(|c| (probs[c] * (1.0 - probs[c])).max(hess_min))
            .collect();
        (grad, hess)
    });

    assemble_grad_hess(rows, n, n_classes)
}

fn assemble_grad_hess(
    rows: Vec<(Vec<f64>, Vec<f64>)>,
    n: usize,
    n_classes: usize,
) -> Result<GradHess> {
    let mut grad = Matrix::zeros(n, n_classes);
    let mut hess = Matrix::zeros(n, n_classes);
    for (r, (g, h)) in rows.into_iter().enumerate() {
        for (c, &v) in g.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient at row {r}, class {c}"
                )));
            }
            grad.set(r, c, v);
        }
        for (c, &v) in h.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite hessian at row {r}, class {c}"
                )));
            }
            hess.set(r, c, v);
        }
    }
    Ok(GradHess { grad, hess })
}

/// Result of expanding a soft-labeled table into hard-labeled copies.
#[derive(Debug, Clone)]
pub struct ResolutionExpansion {
    pub table: FrameTable,
    pub hard_labels: Vec<usize>,
    /// Source rows that produced zero copies in floor mode (dropped).
    pub dropped_rows: usize,
}

/// Expand each row into hard-labeled copies at resolution K.
///
/// In floor mode class `c` receives `floor(K * y_c)` copies (at most K per
/// source row, possibly zero). In largest-remainder mode each source row
/// produces exactly K copies. `second_index` values are renumbered
/// consecutively within each subsequence so the expanded table still
/// satisfies the frame-table invariants; the expansion is a training
/// artifact, not a temporal record.
pub fn duplicate_for_resolution(
    table: &FrameTable,
    labels: &SoftLabelMatrix,
    k: Resolution,
    mode: DuplicationMode,
) -> Result<ResolutionExpansion> {
    if labels.n_rows() != table.n_rows() {
        return Err(Error::validation(format!(
            "{} label rows for {} table rows",
            labels.n_rows(),
            table.n_rows()
        )));
    }
    let kk = k.get();
    let n_classes = labels.n_classes();
    let mut out = FrameTable::new(table.columns.clone(), table.n_classes);
    let mut hard_labels = Vec::new();
    let mut dropped = 0usize;
    let mut per_subseq_counter: std::collections::HashMap<(u32, u32), u32> =
        std::collections::HashMap::new();

    for (r, row) in table.rows.iter().enumerate() {
        let y = labels.row(r);
        let mut copies = vec![0u64; n_classes];
        for c in 0..n_classes {
            copies[c] = resolution_floor(y[c], kk);
        }
        if mode == DuplicationMode::LargestRemainder {
            let assigned: u64 = copies.iter().sum();
            let mut leftovers = u64::from(kk).saturating_sub(assigned);
            if leftovers > 0 {
                let mut fracs: Vec<(usize, f64)> = (0..n_classes)
                    .map(|c| (c, y[c] * f64::from(kk) - copies[c] as f64))
                    .collect();
                // largest fractional part first, ties to the lower class index
                fracs.sort_by(|a, b| {
                    b.1.partial_cmp(&a.1)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.cmp(&b.0))
                });
                for (c, _) in fracs {
                    if leftovers == 0 {
                        break;
                    }
                    copies[c] += 1;
                    leftovers -= 1;
                }
            }
        }
        let total: u64 = copies.iter().sum();
        if total == 0 {
            dropped += 1;
            continue;
        }
        let counter = per_subseq_counter
            .entry((row.participant_id, row.subsequence_id))
            .or_insert(0);
        for (c, &count) in copies.iter().enumerate() {
            for _ in 0..count {
                let mut copy = row.clone();
                copy.second_index = *counter;
                *counter += 1;
                let mut one_hot = vec![0.0; table.n_classes];
                if c < table.n_classes {
                    one_hot[c] = 1.0;
                }
                copy.soft_label = Some(one_hot);
                out.rows.push(copy);
                hard_labels.push(c);
            }
        }
    }
    if dropped > 0 {
        log::warn!("duplicate_for_resolution: {dropped} row(s) produced zero copies and were dropped");
    }
    Ok(ResolutionExpansion {
        table: out,
        hard_labels,
        dropped_rows: dropped,
    })
}

/// Quantized and exact softmax Brier scores for a probability matrix.
///
/// `L_approx` replaces each probability by `floor(K p) / K`, the value the
/// hard-target duplication scheme optimizes; `L_exact` is the expanded exact
/// form. The gap satisfies
/// `|L_approx - L_exact| <= (1/N) sum_n sum_c w_c (2 y/K + 2 p/K + 1/K^2)`.
pub fn approx_exact_gap(
    probs: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    k: Resolution,
) -> Result<(f64, f64)> {
    if probs.kind() != ScoreKind::Probability {
        return Err(Error::validation("approx_exact_gap expects probabilities"));
    }
    check_shapes(probs.n_rows(), probs.n_classes(), labels, weights)?;
    let w = weights.as_slice();
    let kk = f64::from(k.get());
    let n = probs.n_rows();
    let approx_terms = exec::map_range(n, |r| {
        let p = probs.row(r);
        let y = labels.row(r);
        let mut acc = 0.0;
        for c in 0..p.len() {
            let q = resolution_floor(p[c], k.get()) as f64 / kk;
            acc += w[c] * (y[c] * y[c] - 2.0 * y[c] * q + q * q);
        }
        acc
    });
    let exact_terms = exec::map_range(n, |r| {
        let p = probs.row(r);
        let y = labels.row(r);
        let mut acc = 0.0;
        for c in 0..p.len() {
            acc += w[c] * (y[c] * y[c] - 2.0 * y[c] * p[c] + p[c] * p[c]);
        }
        acc
    });
    Ok((
        pairwise_sum(&approx_terms) / n as f64,
        pairwise_sum(&exact_terms) / n as f64,
    ))
}

/// The quantization bound on `|L_approx - L_exact|` for the given inputs.
pub fn quantization_bound(
    probs: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    k: Resolution,
) -> f64 {
    let w = weights.as_slice();
    let kk = f64::from(k.get());
    let n = probs.n_rows();
    let terms: Vec<f64> = (0..n)
        .map(|r| {
            let p = probs.row(r);
            let y = labels.row(r);
            let mut acc = 0.0;
            for c in 0..p.len() {
                acc += w[c] * (2.0 * y[c] / kk + 2.0 * p[c] / kk + 1.0 / (kk * kk));
            }
            acc
        })
        .collect();
    pairwise_sum(&terms) / n as f64
}
