use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::NetworkModel;

/// Index split `w = [w_n, w_z]` around a saddle: `w_n` holds the weights that
/// carry the saddle's output, `w_z` the weights that are zero there.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddlePartition {
    pub nonzero: Vec<usize>,
    pub zero: Vec<usize>,
}

impl SaddlePartition {
    /// Checks that the two index sets are a disjoint cover of `0..k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let mut seen = vec![false; k];
        for &i in self.nonzero.iter().chain(&self.zero) {
            if i >= k {
                return Err(Error::dim(format!("partition index {i} out of range {k}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!("partition index {i} repeated")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::domain("partition does not cover every weight"));
        }
        Ok(())
    }

    pub fn gather(&self, w: &[f64], which: &[usize]) -> Vec<f64> {
        which.iter().map(|&i| w[i]).collect()
    }

    pub fn split(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.gather(w, &self.nonzero), self.gather(w, &self.zero))
    }

    pub fn join(&self, wn: &[f64], wz: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.nonzero.len() + self.zero.len()];
        for (&i, &v) in self.nonzero.iter().zip(wn) {
            w[i] = v;
        }
        for (&i, &v) in self.zero.iter().zip(wz) {
            w[i] = v;
        }
        w
    }
}

/// Flat parameter vector for a [`NetworkModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    values: Vec<f64>,
    partition: Option<SaddlePartition>,
}

impl WeightVector {
    pub fn new(model: &NetworkModel, values: Vec<f64>) -> Result<Self> {
        if values.len() != model.param_dim() {
            return Err(Error::dim(format!(
                "{} weights for a model with {} parameters",
                values.len(),
                model.param_dim()
            )));
        }
        Ok(WeightVector {
            values,
            partition: None,
        })
    }

    pub fn with_partition(mut self, partition: SaddlePartition) -> Result<Self> {
        partition.validate(self.values.len())?;
        self.partition = Some(partition);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn partition(&self) -> Option<&SaddlePartition> {
        self.partition.as_ref()
    }
}

impl AsRef<[f64]> for WeightVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}
