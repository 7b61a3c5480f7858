use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Fixed training data: `n` inputs of dimension `d` stored column by column,
/// plus one real label per input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// `inputs` is column-major: sample `i` occupies `inputs[i*dim..(i+1)*dim]`.
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::dim("input dimension must be at least 1"));
        }
        if labels.is_empty() {
            return Err(Error::dim("dataset needs at least one sample"));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::dim(format!(
                "{} input values for {} samples of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if !linalg::all_finite(&inputs) || !linalg::all_finite(&labels) {
            return Err(Error::domain("dataset entries must be finite"));
        }
        Ok(Dataset {
            dim,
            inputs,
            labels,
        })
    }

    pub fn from_columns(columns: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let dim = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != dim) {
            return Err(Error::dim("ragged input columns"));
        }
        Self::new(dim, columns.concat(), labels)
    }

    /// Like [`Dataset::new`] but also requires every input to have unit norm.
    pub fn new_unit_norm(dim: usize, inputs: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        let data = Self::new(dim, inputs, labels)?;
        if !data.is_unit_norm(1e-12) {
            return Err(Error::domain("inputs are not unit norm"));
        }
        Ok(data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn is_unit_norm(&self, tol: f64) -> bool {
        self.inputs().all(|x| (linalg::norm(x) - 1.0).abs() <= tol)
    }

    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.inputs.clone(), labels)
    }

    pub fn scale_inputs(&self, c: f64) -> Result<Self> {
        Self::new(self.dim, linalg::scaled(&self.inputs, c), self.labels.clone())
    }

    /// Appends the mirror `{-xᵢ, -yᵢ}` of every sample.
    pub fn mirrored(&self) -> Self {
        self.mirror_with(-1.0)
    }

    /// Appends the mirror `{-xᵢ, +yᵢ}` of every sample.
    pub fn mirrored_even(&self) -> Self {
        self.mirror_with(1.0)
    }

    fn mirror_with(&self, label_sign: f64) -> Self {
        let mut inputs = self.inputs.clone();
        inputs.extend(self.inputs.iter().map(|v| -v));
        let mut labels = self.labels.clone();
        labels.extend(self.labels.iter().map(|v| label_sign * v));
        Dataset {
            dim: self.dim,
            inputs,
            labels,
        }
    }

    /// For data of the form `{xᵢ,yᵢ} ∪ {-xᵢ,-yᵢ}` returns the first half.
    /// Each sample must have its mirror at `i + n/2`.
    pub fn symmetric_core(&self) -> Result<Self> {
        self.core_with(-1.0)
    }

    /// As [`Dataset::symmetric_core`] for mirrors `{-xᵢ, +yᵢ}`.
    pub fn even_symmetric_core(&self) -> Result<Self> {
        self.core_with(1.0)
    }

    fn core_with(&self, label_sign: f64) -> Result<Self> {
        let n = self.len();
        if n % 2 != 0 {
            return Err(Error::domain("symmetric data needs an even sample count"));
        }
        let h = n / 2;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        for i in 0..h {
            let mirrored = self
                .x(i)
                .iter()
                .zip(self.x(i + h))
                .all(|(a, b)| close(-a, *b));
            let lab = close(label_sign * self.labels[i], self.labels[i + h]);
            if !mirrored || !lab {
                return Err(Error::domain(format!(
                    "sample {} is not the mirror of sample {i}",
                    i + h
                )));
            }
        }
        Self::new(
            self.dim,
            self.inputs[..h * self.dim].to_vec(),
            self.labels[..h].to_vec(),
        )
    }

    /// The first `m` samples.
    pub fn head(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.len() {
            return Err(Error::dim(format!("cannot take {m} of {} samples", self.len())));
        }
        Self::new(
            self.dim,
            self.inputs[..m * self.dim].to_vec(),
            self.labels[..m].to_vec(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        assert!(Dataset::new(0, vec![], vec![1.0]).is_err());
        assert!(Dataset::new(2, vec![1.0], vec![1.0]).is_err());
        assert!(Dataset::new(1, vec![f64::NAN], vec![1.0]).is_err());
        assert!(Dataset::new(1, vec![1.0], vec![]).is_err());
    }

    #[test]
    fn unit_norm_flag() {
        assert!(Dataset::new_unit_norm(2, vec![0.6, 0.8], vec![1.0]).is_ok());
        assert!(Dataset::new_unit_norm(2, vec![0.6, 0.9], vec![1.0]).is_err());
    }

    #[test]
    fn mirror_round_trip() {
        let d = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![5.0, -4.0]).unwrap();
        let m = d.mirrored();
        assert_eq!(m.len(), 4);
        assert_eq!(m.symmetric_core().unwrap(), d);
        assert!(d.symmetric_core().is_err());
        let e = d.mirrored_even();
        assert_eq!(e.labels(), &[5.0, -4.0, 5.0, -4.0]);
        assert_eq!(e.even_symmetric_core().unwrap(), d);
        assert!(e.symmetric_core().is_err());
        assert_eq!(e.head(2).unwrap(), d);
    }
}
