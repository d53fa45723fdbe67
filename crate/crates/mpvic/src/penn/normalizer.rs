//! Column statistics for mapping data to zero mean and unit spread.

use ndarray::{Array1, Array2, Axis};

/// Columns with spread below this keep scale 1, so constant columns pass
/// through unscaled instead of amplifying noise.
const MIN_STD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    /// Fit per-column mean and population standard deviation.
    pub fn fit(data: &Array2<f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let mean = data.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(data.ncols());
        for row in data.rows() {
            for (j, &x) in row.iter().enumerate() {
                let d = x - mean[j];
                var[j] += d * d;
            }
        }
        var /= n;
        let std = var.mapv(|v| {
            let s = v.sqrt();
            if s < MIN_STD {
                1.0
            } else {
                s
            }
        });
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn denormalize(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] = row[j] * self.std[j] + self.mean[j];
            }
        }
        out
    }

    /// Map a variance in normalized units back to data units: var·std².
    pub fn denormalize_variance(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for j in 0..row.len() {
                row[j] *= self.std[j] * self.std[j];
            }
        }
        out
    }
}
