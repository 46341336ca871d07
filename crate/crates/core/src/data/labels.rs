//! Soft labels, class weights and score matrices.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Tolerance for "rows sum to 1" checks.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// N x C row-stochastic matrix of annotator-proportion targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelMatrix {
    values: Matrix,
}

impl SoftLabelMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        for r in 0..values.nrows() {
            let row = values.row(r);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "soft label [{r},{c}] = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::validation(format!(
                    "soft label row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(SoftLabelMatrix { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// One-hot soft labels from hard class indices.
    pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut m = Matrix::zeros(labels.len(), n_classes);
        for (r, &c) in labels.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::validation(format!(
                    "label {c} out of range for {n_classes} classes"
                )));
            }
            m.set(r, c, 1.0);
        }
        SoftLabelMatrix::new(m)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> SoftLabelMatrix {
        SoftLabelMatrix {
            values: self.values.select_rows(rows),
        }
    }
}

/// Length-C vector of positive class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::validation("class weights must be nonempty"));
        }
        for (c, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::validation(format!(
                    "class weight [{c}] = {w} must be positive and finite"
                )));
            }
        }
        Ok(ClassWeights { weights })
    }

    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights {
            weights: vec![1.0; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        ClassWeights::new(self.weights.iter().map(|w| w * factor).collect())
    }
}

/// Whether a score matrix holds raw (pre-softmax) scores or probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    Raw,
    Probability,
}

/// N x C matrix of raw scores or row-stochastic probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    values: Matrix,
    kind: ScoreKind,
}

impl ScoreMatrix {
    pub fn raw(values: Matrix) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::validation("raw score matrix has non-finite entries"));
        }
        Ok(ScoreMatrix {
            values,
            kind: ScoreKind::Raw,
        })
    }

    pub fn probability(values: Matrix) -> Result<Self> {
        for r in 0..values.nrows() {
            let row = values.row(r);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "probability [{r},{c}] = {v} outside [0,1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::validation(format!(
                    "probability row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ScoreMatrix {
            values,
            kind: ScoreKind::Probability,
        })
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn select_rows(&self, rows: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            values: self.values.select_rows(rows),
            kind: self.kind,
        }
    }
}

/// Hard class index per row: argmax, ties to the lowest class index.
pub fn harden_labels(labels: &SoftLabelMatrix) -> Vec<usize> {
    (0..labels.n_rows())
        .map(|r| argmax_lowest(labels.row(r)))
        .collect()
}

pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = row[0];
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > best_val {
            best = c;
            best_val = v;
        }
    }
    best
}

/// Inverse-frequency class weights, rescaled so they sum to C.
///
/// A class with zero total mass gets the maximum weight computed among the
/// populated classes (with a warning) so downstream scoring stays finite.
pub fn class_weights_from_frequency(labels: &SoftLabelMatrix) -> Result<ClassWeights> {
    let n = labels.n_rows();
    let c = labels.n_classes();
    if n == 0 {
        return Err(Error::validation("cannot derive class weights from 0 rows"));
    }
    let mut mass = vec![0.0f64; c];
    for r in 0..n {
        for (k, &v) in labels.row(r).iter().enumerate() {
            mass[k] += v;
        }
    }
    let mut raw: Vec<Option<f64>> = mass
        .iter()
        .map(|&m| if m > 0.0 { Some(n as f64 / m) } else { None })
        .collect();
    let max_raw = raw
        .iter()
        .filter_map(|w| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_raw.is_finite() {
        return Err(Error::validation("all classes have zero mass"));
    }
    for (k, w) in raw.iter_mut().enumerate() {
        if w.is_none() {
            log::warn!("class {k} has zero total mass; assigning the maximum weight {max_raw}");
            *w = Some(max_raw);
        }
    }
    let weights: Vec<f64> = raw.into_iter().map(Option::unwrap).collect();
    let total: f64 = weights.iter().sum();
    ClassWeights::new(weights.iter().map(|w| w * c as f64 / total).collect())
}
