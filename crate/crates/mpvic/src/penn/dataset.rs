//! Transition storage with a fixed holdout split and CSV persistence.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

use super::net::{ACTION_DIM, INPUT_DIM, STATE_DIM};

pub const TRANSITION_COLUMNS: [&str; 21] = [
    "x", "y", "z", "vx", "vy", "vz", "kx", "ky", "kz", "fx", "fy", "fz", "rx", "ry", "rz",
    "x_next", "y_next", "z_next", "vx_next", "vy_next", "vz_next",
];

/// Every stride-th record is held out and never trained on.
const HOLDOUT_STRIDE: usize = 10;

#[derive(Error, Debug)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: expected {expected:?}, got {got:?}")]
    BadHeader { expected: Vec<String>, got: Vec<String> },
    #[error("row {row}: {problem}")]
    BadRow { row: usize, problem: String },
}

/// One recorded step: state, action = [stiffness, force, reference], next state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: [f64; STATE_DIM],
    pub action: [f64; ACTION_DIM],
    pub next_state: [f64; STATE_DIM],
}

impl Transition {
    pub fn delta(&self) -> [f64; STATE_DIM] {
        let mut d = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            d[i] = self.next_state[i] - self.state[i];
        }
        d
    }
}

/// Append-only transition log. The holdout split is positional, so it is
/// stable under appends: a record's split never changes once written.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    records: Vec<Transition>,
}

impl Dataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        self.records.push(t);
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|i| (i + 1) % HOLDOUT_STRIDE != 0).collect()
    }

    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.records.len()).filter(|i| (i + 1) % HOLDOUT_STRIDE == 0).collect()
    }

    /// Stacked model inputs (n,15) and delta targets (n,6) for the given rows.
    pub fn matrices(&self, indices: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let mut x = Array2::zeros((indices.len(), INPUT_DIM));
        let mut t = Array2::zeros((indices.len(), STATE_DIM));
        for (row, &i) in indices.iter().enumerate() {
            let r = &self.records[i];
            for j in 0..STATE_DIM {
                x[(row, j)] = r.state[j];
            }
            for j in 0..ACTION_DIM {
                x[(row, STATE_DIM + j)] = r.action[j];
            }
            let d = r.delta();
            for j in 0..STATE_DIM {
                t[(row, j)] = d[j];
            }
        }
        (x, t)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(TRANSITION_COLUMNS)?;
        for r in &self.records {
            let mut row = Vec::with_capacity(21);
            row.extend_from_slice(&r.state);
            row.extend_from_slice(&r.action);
            row.extend_from_slice(&r.next_state);
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, DatasetError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let expected: Vec<String> = TRANSITION_COLUMNS.iter().map(|s| s.to_string()).collect();
        if got != expected {
            return Err(DatasetError::BadHeader { expected, got });
        }
        let mut records = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != 21 {
                return Err(DatasetError::BadRow {
                    row,
                    problem: format!("expected 21 fields, got {}", rec.len()),
                });
            }
            let mut vals = [0.0f64; 21];
            for (k, field) in rec.iter().enumerate() {
                vals[k] = field.parse().map_err(|e| DatasetError::BadRow {
                    row,
                    problem: format!("field {k} ({field:?}): {e}"),
                })?;
            }
            let mut t = Transition {
                state: [0.0; STATE_DIM],
                action: [0.0; ACTION_DIM],
                next_state: [0.0; STATE_DIM],
            };
            t.state.copy_from_slice(&vals[0..6]);
            t.action.copy_from_slice(&vals[6..15]);
            t.next_state.copy_from_slice(&vals[15..21]);
            records.push(t);
        }
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize) -> Transition {
        let f = i as f64;
        Transition {
            state: [f, f + 0.1, f + 0.2, 0.0, -f, 0.5],
            action: [100.0 + f, 200.0, 300.0, 1.0, -2.0, 3.0, 0.01, 0.02, 0.03],
            next_state: [f + 1.0, f, f, 0.1, 0.2, 0.3],
        }
    }

    #[test]
    fn holdout_split_is_stable_under_appends() {
        let mut d = Dataset::new();
        for i in 0..25 {
            d.push(sample(i));
        }
        let h1 = d.holdout_indices();
        for i in 25..40 {
            d.push(sample(i));
        }
        let h2 = d.holdout_indices();
        assert_eq!(&h2[..h1.len()], &h1[..]);
        assert_eq!(h1, vec![9, 19]);
        assert_eq!(d.train_indices().len() + h2.len(), 40);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("transitions.csv");
        let mut d = Dataset::new();
        for i in 0..7 {
            let mut t = sample(i);
            t.state[0] = 0.1 + i as f64 * 1e-13; // exercise full precision
            d.push(t);
        }
        d.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(back.records(), d.records());
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(Dataset::read_csv(&path), Err(DatasetError::BadHeader { .. })));
    }

    #[test]
    fn matrices_stack_inputs_and_deltas() {
        let mut d = Dataset::new();
        d.push(sample(0));
        d.push(sample(3));
        let (x, t) = d.matrices(&[0, 1]);
        assert_eq!(x.dim(), (2, 15));
        assert_eq!(t.dim(), (2, 6));
        assert_eq!(x[(1, 0)], 3.0);
        assert_eq!(x[(1, 6)], 103.0);
        assert_eq!(t[(0, 0)], 1.0);
        assert_eq!(t[(1, 0)], 1.0);
    }
}
