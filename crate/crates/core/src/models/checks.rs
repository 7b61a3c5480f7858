//! Homogeneity and Euler-identity residuals, and the output-scale constant β.

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel};
use crate::rng;

/// Default multiplier applied to sampled estimates of β.
pub const BETA_SAFETY: f64 = 1.25;

/// `|H(x; c·w) − c^L·H(x; w)|`, `L` the model degree (2 in scope).
pub fn check_homogeneity(model: &NetworkModel, x: &[f64], w: &[f64], c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::domain(format!("scale must be non-negative, got {c}")));
    }
    let base = model.eval_sample(x, w)?;
    let scaled = model.eval_sample(x, &linalg::scaled(w, c))?;
    Ok((scaled - c.powi(model.degree() as i32) * base).abs())
}

/// `|wᵀs − L·H(x; w)|` for the policy-selected `s ∈ ∂H(x; w)`.
pub fn euler_residual(
    model: &NetworkModel,
    x: &[f64],
    w: &[f64],
    policy: &KinkPolicy,
) -> Result<f64> {
    let h = model.eval_sample(x, w)?;
    let s = model.subgrad_sample(x, w, policy)?;
    Ok((linalg::dot(w, &s) - model.degree() as f64 * h).abs())
}

/// `‖s(x; c·w) − c^(L−1)·s(x; w)‖` under a fixed policy.
pub fn subgrad_scaling_residual(
    model: &NetworkModel,
    x: &[f64],
    w: &[f64],
    c: f64,
    policy: &KinkPolicy,
) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(Error::domain(format!("scale must be non-negative, got {c}")));
    }
    let s = model.subgrad_sample(x, w, policy)?;
    let sc = model.subgrad_sample(x, &linalg::scaled(w, c), policy)?;
    let k = c.powi(model.degree() as i32 - 1);
    Ok(sc
        .iter()
        .zip(&s)
        .map(|(a, b)| (a - k * b).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn sampled_sup(
    model: &NetworkModel,
    data: &Dataset,
    n_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, stream);
    let mut best = 0.0f64;
    for _ in 0..n_samples {
        let w = rng::unit_vec(&mut rng, model.param_dim());
        best = best.max(linalg::norm(&model.eval(data, &w)?));
    }
    Ok(best)
}

/// Estimate of `β = sup{‖H(X; w)‖₂ : ‖w‖₂ = 1}` from `n_samples` uniform draws
/// on the sphere, times `safety`. For a fixed seed the draws form one stream,
/// so the estimate is nondecreasing in `n_samples`.
pub fn beta_estimate(
    model: &NetworkModel,
    data: &Dataset,
    n_samples: usize,
    seed: u64,
    safety: f64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::domain("beta_estimate needs at least one sample"));
    }
    model.check_data(data)?;
    Ok(safety * sampled_sup(model, data, n_samples, seed, 0)?)
}

/// β for separable models, sampled block by block.
///
/// For `H = Σᵢ Hᵢ(wᵢ)` with `Σᵢ‖wᵢ‖² = 1`, two-homogeneity gives
/// `‖H(X; w)‖ ≤ Σᵢ ‖wᵢ‖² βᵢ ≤ maxᵢ βᵢ`, with equality when all mass sits in
/// the best block, so `β = maxᵢ βᵢ`. Sampling the low-dimensional block
/// spheres is far tighter than sampling the full one.
pub fn beta_separable(
    model: &NetworkModel,
    data: &Dataset,
    n_samples: usize,
    seed: u64,
    safety: f64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::domain("beta_separable needs at least one sample"));
    }
    model.check_data(data)?;
    let mut best = 0.0f64;
    let mut seen: Vec<(NetworkModel, Option<usize>)> = Vec::new();
    for i in 0..model.blocks().len() {
        let sub = model.block_model(i)?;
        if seen.contains(&sub) {
            continue;
        }
        let block_data = match sub.1 {
            Some(coord) => Dataset::new(
                1,
                data.inputs().map(|x| x[coord]).collect(),
                data.labels().to_vec(),
            )?,
            None => data.clone(),
        };
        best = best.max(sampled_sup(&sub.0, &block_data, n_samples, seed, 1 + i as u64)?);
        seen.push(sub);
    }
    Ok(safety * best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homogeneity_trivial_scales() {
        let m = NetworkModel::squared_relu(2, 2);
        let w = [0.3, -1.2, 0.7, 0.4];
        let x = [0.5, -0.25];
        assert_eq!(check_homogeneity(&m, &x, &w, 1.0).unwrap(), 0.0);
        assert_eq!(check_homogeneity(&m, &x, &w, 0.0).unwrap(), 0.0);
        let h = m.eval_sample(&x, &w).unwrap();
        assert!(check_homogeneity(&m, &x, &w, 3.0).unwrap() <= 1e-12 * (1.0 + 9.0 * h.abs()));
        assert!(matches!(
            check_homogeneity(&m, &x, &w, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn euler_identity_on_a_kink() {
        let m = NetworkModel::two_layer(0.0, 1, 2);
        // x = e₁, u = [0, 1]: pre-activation exactly zero
        let w = [0.8, 0.0, 1.0];
        for v in [0.0, 0.5, 1.0] {
            let r = euler_residual(&m, &[1.0, 0.0], &w, &KinkPolicy::with_value(v)).unwrap();
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn beta_of_single_unit_input() {
        let m = NetworkModel::squared_relu(1, 2);
        let data = Dataset::new(2, vec![1.0, 0.0], vec![1.0]).unwrap();
        let b = beta_estimate(&m, &data, 10_000, 3, BETA_SAFETY).unwrap();
        assert!((0.9..=1.25).contains(&b), "beta = {b}");
    }

    #[test]
    fn beta_of_zero_inputs_is_zero() {
        let m = NetworkModel::two_layer(0.0, 3, 2);
        let data = Dataset::new(2, vec![0.0; 6], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(beta_estimate(&m, &data, 100, 0, BETA_SAFETY).unwrap(), 0.0);
    }

    #[test]
    fn beta_monotone_in_sample_count() {
        let m = NetworkModel::two_layer(0.2, 2, 2);
        let data = Dataset::new(2, vec![1.0, 0.5, -0.3, 0.9, 0.2, -1.0], vec![1.0; 3]).unwrap();
        let mut prev = 0.0;
        for n in [1, 10, 100, 1000] {
            let b = beta_estimate(&m, &data, n, 11, 1.0).unwrap();
            assert!(b >= prev);
            prev = b;
        }
    }

    #[test]
    fn separable_beta_dominates_full_sphere_estimate() {
        let m = NetworkModel::squared_relu(20, 2);
        let cols: Vec<f64> = (0..10)
            .flat_map(|i| {
                let t = i as f64 * 0.6;
                [t.cos(), t.sin()]
            })
            .collect();
        let data = Dataset::new(2, cols, vec![1.0; 10]).unwrap();
        let full = beta_estimate(&m, &data, 2000, 0, 1.0).unwrap();
        let sep = beta_separable(&m, &data, 2000, 0, 1.0).unwrap();
        assert!(sep >= full);
    }
}
