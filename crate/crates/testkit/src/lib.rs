//! Test-only support shared by the softboost test suites: a high-precision
//! finite-difference oracle for the objective derivatives, tolerance
//! helpers, and seeded dataset generators. Deliberately independent of the
//! implementation paths it is used to check.

pub mod dd;

use dd::Dd;
use rand::Rng;
use softboost::data::{ClassWeights, Matrix, SoftLabelMatrix};
use softboost::numeric::seeded_rng;

/// Central-difference step pinned by the acceptance contract.
pub const FD_STEP: f64 = 1e-5;

/// Weighted Brier loss of one row, computed entirely in double-double
/// arithmetic, with coordinate `perturb.0` shifted by exactly `perturb.1`.
/// No 1/N factor.
fn brier_row_loss_dd(
    raw: &[f64],
    labels: &[f64],
    weights: &[f64],
    perturb: Option<(usize, f64)>,
) -> Dd {
    let exps: Vec<Dd> = raw
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            let mut x = Dd::from_f64(v);
            if let Some((pc, delta)) = perturb {
                if pc == c {
                    x = x.add(Dd::from_f64(delta));
                }
            }
            x.exp()
        })
        .collect();
    let mut denom = Dd::ZERO;
    for e in &exps {
        denom = denom.add(*e);
    }
    let mut loss = Dd::ZERO;
    for c in 0..raw.len() {
        let sigma = exps[c].div(denom);
        let diff = sigma.sub(Dd::from_f64(labels[c]));
        loss = loss.add(diff.sq().mul_f64(weights[c]));
    }
    loss
}

/// Softmax logloss of one row (`-sum_c y_c ln sigma_c`) in double-double
/// arithmetic. No 1/N factor, matching the logloss objective contract.
fn logloss_row_loss_dd(raw: &[f64], labels: &[f64], perturb: Option<(usize, f64)>) -> Dd {
    let xs: Vec<Dd> = raw
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            let mut x = Dd::from_f64(v);
            if let Some((pc, delta)) = perturb {
                if pc == c {
                    x = x.add(Dd::from_f64(delta));
                }
            }
            x
        })
        .collect();
    let mut denom = Dd::ZERO;
    for x in &xs {
        denom = denom.add(x.exp());
    }
    let lse = denom.ln();
    // -sum y (x - lse) = lse * sum(y) - sum(y x)
    let mut loss = Dd::ZERO;
    let mut label_mass = Dd::ZERO;
    for c in 0..raw.len() {
        label_mass = label_mass.add(Dd::from_f64(labels[c]));
        loss = loss.sub(xs[c].mul_f64(labels[c]));
    }
    loss.add(lse.mul(label_mass))
}

/// Central finite differences of a per-row loss with respect to every raw
/// coordinate of the row; the center evaluation is shared across
/// coordinates. Returns (gradient, second derivative) per coordinate.
fn row_central_differences(
    loss: impl Fn(Option<(usize, f64)>) -> Dd,
    n_classes: usize,
) -> Vec<(f64, f64)> {
    let center = loss(None);
    (0..n_classes)
        .map(|coord| {
            let plus = loss(Some((coord, FD_STEP)));
            let minus = loss(Some((coord, -FD_STEP)));
            let grad = plus.sub(minus).to_f64() / (2.0 * FD_STEP);
            let hess = plus.sub(center.mul_f64(2.0)).add(minus).to_f64() / (FD_STEP * FD_STEP);
            (grad, hess)
        })
        .collect()
}

/// Finite-difference gradient and Hessian of the mean weighted Brier loss
/// (matching `brier_grad_hess`, including the 1/N factor).
pub fn brier_fd(
    raw: &Matrix,
    labels: &SoftLabelMatrix,
    weights: &ClassWeights,
) -> (Matrix, Matrix) {
    let n = raw.nrows();
    let c = raw.ncols();
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, c);
    let mut hess = Matrix::zeros(n, c);
    for r in 0..n {
        let row = raw.row(r);
        let y = labels.row(r);
        let diffs = row_central_differences(
            |perturb| brier_row_loss_dd(row, y, weights.as_slice(), perturb),
            c,
        );
        for (k, (g, h)) in diffs.into_iter().enumerate() {
            grad.set(r, k, g * inv_n);
            hess.set(r, k, h * inv_n);
        }
    }
    (grad, hess)
}

/// Finite-difference gradient and Hessian of the summed softmax logloss
/// (matching `logloss_grad_hess`, no 1/N factor).
pub fn logloss_fd(raw: &Matrix, labels: &SoftLabelMatrix) -> (Matrix, Matrix) {
    let n = raw.nrows();
    let c = raw.ncols();
    let mut grad = Matrix::zeros(n, c);
    let mut hess = Matrix::zeros(n, c);
    for r in 0..n {
        let row = raw.row(r);
        let y = labels.row(r);
        let diffs = row_central_differences(|perturb| logloss_row_loss_dd(row, y, perturb), c);
        for (k, (g, h)) in diffs.into_iter().enumerate() {
            grad.set(r, k, g);
            hess.set(r, k, h);
        }
    }
    (grad, hess)
}

/// The acceptance comparator: relative error below `rel`, with an absolute
/// fallback below `abs` near zero.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    let diff = (a - b).abs();
    diff <= abs || diff <= rel * a.abs().max(b.abs())
}

/// Random raw scores, row-stochastic labels and positive weights.
pub fn random_batch(
    n: usize,
    n_classes: usize,
    seed: u64,
) -> (Matrix, SoftLabelMatrix, ClassWeights) {
    let mut rng = seeded_rng(seed);
    let mut raw = Matrix::zeros(n, n_classes);
    for r in 0..n {
        for c in 0..n_classes {
            raw.set(r, c, rng.gen_range(-3.0..3.0));
        }
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: f64 = row.iter().sum();
        for v in &mut row {
            *v /= sum;
        }
        labels.push(row);
    }
    let weights: Vec<f64> = (0..n_classes).map(|_| rng.gen_range(0.5..2.0)).collect();
    (
        raw,
        SoftLabelMatrix::from_rows(&labels).unwrap(),
        ClassWeights::new(weights).unwrap(),
    )
}

/// Three well-separated Gaussian blobs in 2-D with one-hot labels, the
/// booster sanity fixture.
pub fn three_blobs(n_per_class: usize, seed: u64) -> (Matrix, SoftLabelMatrix) {
    let centers = [(0.0, 0.0), (6.0, 0.0), (0.0, 6.0)];
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &(cx, cy)) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let (dx, dy) = (
                r * (2.0 * std::f64::consts::PI * u2).cos(),
                r * (2.0 * std::f64::consts::PI * u2).sin(),
            );
            rows.push(vec![cx + dx, cy + dy]);
            let mut label = vec![0.0; 3];
            label[c] = 1.0;
            labels.push(label);
        }
    }
    (
        Matrix::from_rows(&rows).unwrap(),
        SoftLabelMatrix::from_rows(&labels).unwrap(),
    )
}
