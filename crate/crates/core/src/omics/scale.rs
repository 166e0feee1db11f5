use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column min-max scaler fitted on a training split. NaN marks a
/// missing value; it is imputed with the column's training mean before
/// scaling. Constant columns map to 0 and out-of-range test values are
/// not clipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    /// Columns left untouched (discrete encodings).
    pub passthrough: Vec<bool>,
}

impl ColumnScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        Self::fit_masked(rows, &vec![false; n_cols])
    }

    pub fn fit_masked(rows: &[Vec<f64>], passthrough: &[bool]) -> Result<Self> {
        let n_cols = passthrough.len();
        let mut min = vec![f64::INFINITY; n_cols];
        let mut max = vec![f64::NEG_INFINITY; n_cols];
        let mut sum = vec![0.0; n_cols];
        let mut count = vec![0usize; n_cols];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::dim(format!("scaler fit: row {r} has {} columns, expected {n_cols}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v.is_nan() {
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::data(format!("scaler fit: non-finite value in row {r}, column {j}")));
                }
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
                sum[j] += v;
                count[j] += 1;
            }
        }
        let mean = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        for j in 0..n_cols {
            if count[j] == 0 {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        Ok(ColumnScaler {
            min,
            max,
            mean,
            passthrough: passthrough.to_vec(),
        })
    }

    pub fn n_cols(&self) -> usize {
        self.min.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_cols() {
            return Err(Error::dim(format!(
                "scaler transform: row has {} columns, scaler was fitted on {}",
                row.len(),
                self.n_cols()
            )));
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let v = if v.is_nan() { self.mean[j] } else { v };
                if self.passthrough[j] {
                    return v;
                }
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    (v - self.min[j]) / span
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// Fits on `train` and applies the same map to both splits.
pub fn scale_features(train: &[Vec<f64>], test: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, ColumnScaler)> {
    let scaler = ColumnScaler::fit(train)?;
    if let Some(row) = test.first() {
        if row.len() != scaler.n_cols() {
            return Err(Error::dim(format!(
                "scale_features: train has {} columns, test has {}",
                scaler.n_cols(),
                row.len()
            )));
        }
    }
    Ok((scaler.transform(train)?, scaler.transform(test)?, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let (_, test, _) = scale_features(&[vec![0.0], vec![10.0]], &[vec![5.0], vec![20.0]]).unwrap();
        assert_eq!(test, vec![vec![0.5], vec![2.0]]);
        let (train, test, _) = scale_features(&[vec![3.0], vec![3.0]], &[vec![-7.0]]).unwrap();
        assert_eq!(train, vec![vec![0.0], vec![0.0]]);
        assert_eq!(test, vec![vec![0.0]]);
    }

    #[test]
    fn imputes_training_mean() {
        let s = ColumnScaler::fit(&[vec![0.0], vec![f64::NAN], vec![4.0], vec![2.0]]).unwrap();
        assert_eq!(s.transform_row(&[f64::NAN]).unwrap(), vec![0.5]);
    }

    #[test]
    fn passthrough_columns_keep_values() {
        let s = ColumnScaler::fit_masked(&[vec![-1.0, 5.0], vec![1.0, 7.0]], &[true, false]).unwrap();
        assert_eq!(s.transform_row(&[0.0, 6.0]).unwrap(), vec![0.0, 0.5]);
    }

    #[test]
    fn column_mismatch() {
        assert!(scale_features(&[vec![1.0, 2.0]], &[vec![1.0]]).is_err());
    }
}
