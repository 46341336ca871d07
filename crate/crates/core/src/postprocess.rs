//! Temporal smoothing of per-second predictions within subsequences, and
//! optimization of the smoothing weights on a validation set.

use serde::{Deserialize, Serialize};

use crate::data::{ClassWeights, Matrix, ScoreMatrix, SoftLabelMatrix};
use crate::error::{Error, Result};
use crate::objectives::brier_score_matrix;

/// Five nonnegative weights over offsets -2..=+2, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothKernel {
    weights: [f64; 5],
}

impl SmoothKernel {
    pub fn new(weights: [f64; 5]) -> Result<Self> {
        if weights.iter().any(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::validation("kernel weights must be >= 0 and finite"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "kernel weights sum to {sum}, expected 1"
            )));
        }
        Ok(SmoothKernel { weights })
    }

    /// The no-op kernel: all mass on offset 0.
    pub fn identity() -> Self {
        SmoothKernel {
            weights: [0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }

    pub fn weights(&self) -> [f64; 5] {
        self.weights
    }
}

/// Weighted average of each second with its two past and two future
/// seconds, within subsequences only.
///
/// At boundaries the in-range weights are renormalized to sum 1; if they
/// sum to zero (a center-free kernel on a too-short subsequence) the row is
/// passed through unchanged. `groups` lists row indices per subsequence in
/// second order, as produced by `FrameTable::subsequence_groups`.
pub fn smooth(
    probs: &ScoreMatrix,
    groups: &[Vec<usize>],
    kernel: &SmoothKernel,
) -> Result<ScoreMatrix> {
    let smoothed = smooth_matrix(probs.values(), groups, kernel)?;
    ScoreMatrix::probability(smoothed)
}

fn smooth_matrix(
    probs: &Matrix,
    groups: &[Vec<usize>],
    kernel: &SmoothKernel,
) -> Result<Matrix> {
    let n_classes = probs.ncols();
    let mut covered = vec![false; probs.nrows()];
    for group in groups {
        for &r in group {
            if r >= probs.nrows() {
                return Err(Error::validation(format!(
                    "group row index {r} out of range"
                )));
            }
            if covered[r] {
                return Err(Error::validation(format!(
                    "row {r} appears in more than one group"
                )));
            }
            covered[r] = true;
        }
    }
    if !covered.iter().all(|&c| c) {
        return Err(Error::validation(
            "groups must cover every prediction row exactly once",
        ));
    }

    let w = kernel.weights;
    let mut out = probs.clone();
    for group in groups {
        let len = group.len() as i64;
        for (pos, &r) in group.iter().enumerate() {
            let pos = pos as i64;
            let mut used = 0.0;
            let mut acc = vec![0.0; n_classes];
            for (k, &wk) in w.iter().enumerate() {
                let offset = k as i64 - 2;
                let src = pos + offset;
                if src < 0 || src >= len {
                    continue;
                }
                used += wk;
                if wk != 0.0 {
                    let row = probs.row(group[src as usize]);
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += wk * v;
                    }
                }
            }
            if used <= 0.0 {
                continue; // keep the input row
            }
            // identity kernel must be a bit-exact no-op
            if used == 1.0 && w[2] == 1.0 {
                continue;
            }
            let dst = out.row_mut(r);
            for (d, a) in dst.iter_mut().zip(&acc) {
                *d = a / used;
            }
        }
    }
    Ok(out)
}

/// Search state for the coordinate-descent optimizer.
const MAX_SWEEPS: usize = 100;
const MIN_IMPROVEMENT: f64 = 1e-7;
const GOLDEN_TOL: f64 = 1e-6;

fn golden_section_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Minimize the weighted Brier score of the smoothed predictions over the
/// 5-weight probability simplex.
///
/// Cyclic coordinate descent: from the current kernel, line-search toward
/// each simplex vertex with golden sections, starting at the identity
/// kernel, until a full sweep improves by less than 1e-7 or 100 sweeps.
/// The result is never worse than the identity kernel on the given data.
pub fn optimize_smooth_weights(
    probs: &ScoreMatrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
    groups: &[Vec<usize>],
) -> Result<SmoothKernel> {
    if labels.n_rows() != probs.n_rows() || labels.n_classes() != probs.n_classes() {
        return Err(Error::validation("prediction/label shapes do not match"));
    }
    let evaluate = |kernel: &SmoothKernel| -> Result<f64> {
        let smoothed = smooth_matrix(probs.values(), groups, kernel)?;
        Ok(brier_score_matrix(&smoothed, labels, weights))
    };

    let mut current = SmoothKernel::identity();
    let mut current_score = evaluate(&current)?;

    for _sweep in 0..MAX_SWEEPS {
        let sweep_start = current_score;
        for vertex in 0..5 {
            let base = current.weights;
            let blend = |t: f64| {
                let mut w = [0.0; 5];
                for (i, item) in w.iter_mut().enumerate() {
                    let v = if i == vertex { 1.0 } else { 0.0 };
                    *item = (1.0 - t) * base[i] + t * v;
                }
                // convex blends of simplex points stay on the simplex up to
                // rounding; renormalize defensively is not needed here
                SmoothKernel { weights: w }
            };
            let objective = |t: f64| match evaluate(&blend(t)) {
                Ok(score) => score,
                Err(_) => f64::INFINITY,
            };
            let (t_best, f_best) = golden_section_min(objective, 0.0, 1.0);
            if f_best < current_score {
                current = blend(t_best);
                current_score = f_best;
            }
        }
        if sweep_start - current_score < MIN_IMPROVEMENT {
            break;
        }
    }
    // exact cleanup: tiny negative residue from blending rounds to zero
    let mut w = current.weights;
    for v in &mut w {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    SmoothKernel::new(w)
}
