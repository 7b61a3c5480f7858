//! Generated datasets and initializations used by the presets.

use std::f64::consts::TAU;

use crate::error::Result;
use crate::models::{Dataset, ModelKind, NetworkModel};
use crate::rng;

/// `n` unit inputs at angles `2πk/n`.
pub fn circle_inputs(n: usize) -> Vec<f64> {
    (0..n)
        .flat_map(|k| {
            let a = TAU * k as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// `n` unit inputs at uniformly random angles.
pub fn random_circle_inputs(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 7);
    (0..n).flat_map(|_| rng::unit_vec(&mut r, 2)).collect()
}

/// `5·max(0, x₁)² + 4·max(0, −x₁)²`
pub fn fig1_label(x: &[f64]) -> f64 {
    5.0 * x[0].max(0.0).powi(2) + 4.0 * (-x[0]).max(0.0).powi(2)
}

fn labelled(inputs: Vec<f64>) -> Result<Dataset> {
    let labels = inputs.chunks_exact(2).map(fig1_label).collect();
    Dataset::new_unit_norm(2, inputs, labels)
}

/// 50 evenly spaced unit inputs labelled by [`fig1_label`].
pub fn fig1_dataset() -> Result<Dataset> {
    labelled(circle_inputs(50))
}

/// As [`fig1_dataset`] with random placement.
pub fn fig1_dataset_random(seed: u64) -> Result<Dataset> {
    labelled(random_circle_inputs(50, seed))
}

/// `Σⱼ max(0, uⱼᵀx)²` with 20 neurons on 2-D inputs.
pub fn fig1_model() -> NetworkModel {
    NetworkModel::squared_relu(20, 2)
}

/// I.i.d. Gaussian weights with standard deviation `std`.
pub fn gaussian_init(model: &NetworkModel, std: f64, seed: u64) -> Vec<f64> {
    rng::gaussian_vec(&mut rng::stream(seed, 1), model.param_dim(), std)
}

/// A squared-ReLU model of `hidden` neurons with the given activation slope.
pub fn squared_relu_model(alpha: f64, signs: Vec<f64>, input_dim: usize) -> Result<NetworkModel> {
    NetworkModel::new(ModelKind::SquaredRelu { alpha, signs }, input_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fig1_data_shape() {
        let d = fig1_dataset().unwrap();
        assert_eq!(d.len(), 50);
        assert!(d.is_unit_norm(1e-12));
        assert_eq!(d.labels()[0], 5.0);
        assert!((d.labels()[25] - 4.0).abs() < 1e-12);
        let r = fig1_dataset_random(3).unwrap();
        assert_eq!(r, fig1_dataset_random(3).unwrap());
        assert_ne!(r, d);
    }
}
