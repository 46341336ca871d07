//! Per-second frame tables: the shared tabular data model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::labels::ROW_SUM_TOL;
use crate::data::{Matrix, SoftLabelMatrix};
use crate::error::{Error, Result};

/// One second of one subsequence: features plus optional auxiliary targets.
///
/// Missing feature values are encoded as NaN; lag/lead features are
/// structurally missing at subsequence boundaries, so missing cells are
/// first-class citizens here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub participant_id: u32,
    pub subsequence_id: u32,
    pub second_index: u32,
    pub features: Vec<f64>,
    /// Train-only auxiliary categorical target (room index).
    pub room: Option<u32>,
    /// Annotator-proportion target over `n_classes` activities.
    pub soft_label: Option<Vec<f64>>,
}

/// Frame rows with an ordered feature-column header and the class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTable {
    pub columns: Vec<String>,
    pub n_classes: usize,
    pub rows: Vec<FrameRow>,
}

/// A single invariant violation found by [`FrameTable::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Row index in the table, when the violation is row-specific.
    pub row: Option<usize>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {}: {}", r, self.rule),
            None => write!(f, "{}", self.rule),
        }
    }
}

impl FrameTable {
    pub fn new(columns: Vec<String>, n_classes: usize) -> Self {
        FrameTable {
            columns,
            n_classes,
            rows: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All invariant violations; empty iff the table is well formed.
    /// Pure and idempotent.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen: HashMap<(u32, u32, u32), usize> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            if row.features.len() != self.columns.len() {
                out.push(Violation {
                    row: Some(i),
                    rule: format!(
                        "feature arity {} differs from header {}",
                        row.features.len(),
                        self.columns.len()
                    ),
                });
            }
            let key = (row.participant_id, row.subsequence_id, row.second_index);
            if let Some(first) = seen.insert(key, i) {
                out.push(Violation {
                    row: Some(i),
                    rule: format!(
                        "duplicate key (participant {}, subsequence {}, second {}), first seen at row {}",
                        key.0, key.1, key.2, first
                    ),
                });
            }
            if let Some(label) = &row.soft_label {
                if label.len() != self.n_classes {
                    out.push(Violation {
                        row: Some(i),
                        rule: format!(
                            "soft label length {} differs from n_classes {}",
                            label.len(),
                            self.n_classes
                        ),
                    });
                } else {
                    let sum: f64 = label.iter().sum();
                    if label.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        out.push(Violation {
                            row: Some(i),
                            rule: "soft label has entries outside [0,1]".to_string(),
                        });
                    } else if (sum - 1.0).abs() > ROW_SUM_TOL {
                        out.push(Violation {
                            row: Some(i),
                            rule: format!("soft label sums to {sum}, expected 1"),
                        });
                    }
                }
            }
        }
        // second_index values within each subsequence must be 0..len
        let mut groups: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        for row in &self.rows {
            groups
                .entry((row.participant_id, row.subsequence_id))
                .or_default()
                .push(row.second_index);
        }
        let mut keys: Vec<(u32, u32)> = groups.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let mut seconds = groups.remove(&key).unwrap();
            seconds.sort_unstable();
            let consecutive = seconds
                .iter()
                .enumerate()
                .all(|(i, &s)| s as usize == i);
            if !consecutive {
                out.push(Violation {
                    row: None,
                    rule: format!(
                        "participant {} subsequence {}: second_index values are not consecutive from 0",
                        key.0, key.1
                    ),
                });
            }
        }
        out
    }

    /// Require a well-formed table, returning the first violations as an error.
    pub fn require_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let listed: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
            Err(Error::validation(format!(
                "frame table has {} violation(s): {}",
                violations.len(),
                listed.join("; ")
            )))
        }
    }

    /// Feature matrix (NaN = missing), rows in table order.
    pub fn feature_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.rows.len(), self.columns.len());
        for (r, row) in self.rows.iter().enumerate() {
            m.row_mut(r).copy_from_slice(&row.features);
        }
        m
    }

    /// Soft labels of every row; errors if any row lacks one.
    pub fn soft_labels(&self) -> Result<SoftLabelMatrix> {
        let mut rows = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            match &row.soft_label {
                Some(label) => rows.push(label.clone()),
                None => {
                    return Err(Error::validation(format!(
                        "row {i} has no soft label"
                    )))
                }
            }
        }
        SoftLabelMatrix::from_rows(&rows)
    }

    pub fn participants(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.iter().map(|r| r.participant_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn row_participants(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.participant_id).collect()
    }

    /// Row indices grouped by (participant, subsequence), each group ordered
    /// by second_index, groups ordered by key.
    pub fn subsequence_groups(&self) -> Vec<((u32, u32), Vec<usize>)> {
        let mut groups: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            groups
                .entry((row.participant_id, row.subsequence_id))
                .or_default()
                .push(i);
        }
        let mut out: Vec<((u32, u32), Vec<usize>)> = groups.into_iter().collect();
        for (_, idxs) in out.iter_mut() {
            idxs.sort_by_key(|&i| self.rows[i].second_index);
        }
        out.sort_by_key(|(key, _)| *key);
        out
    }

    /// Sort rows by (participant, subsequence, second).
    pub fn sort_rows(&mut self) {
        self.rows.sort_by_key(|r| (r.participant_id, r.subsequence_id, r.second_index));
    }

    /// Table restricted to rows of the given participants.
    pub fn filter_participants(&self, keep: &[u32]) -> FrameTable {
        FrameTable {
            columns: self.columns.clone(),
            n_classes: self.n_classes,
            rows: self
                .rows
                .iter()
                .filter(|r| keep.contains(&r.participant_id))
                .cloned()
                .collect(),
        }
    }

    /// Indices of rows belonging to the given participants.
    pub fn participant_row_indices(&self, keep: &[u32]) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| keep.contains(&r.participant_id))
            .map(|(i, _)| i)
            .collect()
    }

    /// Drop the room column from every row.
    pub fn without_room(&self) -> FrameTable {
        let mut t = self.clone();
        for row in &mut t.rows {
            row.room = None;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: u32, s: u32, sec: u32, features: Vec<f64>) -> FrameRow {
        FrameRow {
            participant_id: p,
            subsequence_id: s,
            second_index: sec,
            features,
            room: None,
            soft_label: None,
        }
    }

    #[test]
    fn well_formed_table_has_no_violations() {
        let mut t = FrameTable::new(vec!["a".into(), "b".into()], 3);
        t.rows.push(row(1, 0, 0, vec![1.0, 2.0]));
        t.rows.push(row(1, 0, 1, vec![f64::NAN, 4.0]));
        assert!(t.validate().is_empty());
    }

    #[test]
    fn bad_soft_label_sum_is_flagged() {
        let mut t = FrameTable::new(vec!["a".into()], 2);
        let mut r = row(1, 0, 0, vec![1.0]);
        r.soft_label = Some(vec![0.5, 0.4]);
        t.rows.push(r);
        let v = t.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("sums to"));
        assert_eq!(v[0].row, Some(0));
    }

    #[test]
    fn duplicate_key_is_flagged() {
        let mut t = FrameTable::new(vec!["a".into()], 2);
        t.rows.push(row(1, 0, 0, vec![1.0]));
        t.rows.push(row(1, 0, 0, vec![2.0]));
        let v = t.validate();
        assert!(v.iter().any(|x| x.rule.contains("duplicate key")));
    }

    #[test]
    fn non_consecutive_seconds_flagged() {
        let mut t = FrameTable::new(vec!["a".into()], 2);
        t.rows.push(row(1, 0, 0, vec![1.0]));
        t.rows.push(row(1, 0, 2, vec![2.0]));
        let v = t.validate();
        assert!(v.iter().any(|x| x.rule.contains("not consecutive")));
    }

    #[test]
    fn validate_is_idempotent() {
        let mut t = FrameTable::new(vec!["a".into()], 2);
        t.rows.push(row(1, 0, 0, vec![1.0]));
        t.rows.push(row(1, 0, 0, vec![2.0]));
        let first = t.validate();
        let second = t.validate();
        assert_eq!(first, second);
    }
}
