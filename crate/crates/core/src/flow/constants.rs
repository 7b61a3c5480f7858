use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Loss;
use crate::models::{self, Dataset, ModelKind, NetworkModel};
use crate::trajectory::Trajectory;

/// Growth constants of the small-initialization analysis.
///
/// `beta` bounds `‖H(X; w)‖₂` on the unit sphere, `beta_hat` is a Lipschitz
/// constant of `ℓ′(·, y)` and `beta_tilde = beta_hat·beta + ‖ℓ′(0, y)‖₂`.
/// Along the training flow `‖w(t)‖² ≤ δ²·e^{4·beta·beta_tilde·t}` while
/// `‖w‖ ≤ 1`, so the flow stays within `√C·δ` of the origin until
/// `t_bar(C) = ln C / (4·beta·beta_tilde)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub beta: f64,
    pub beta_hat: f64,
    pub beta_tilde: f64,
    /// Where `beta` came from: `analytic: …`, `sampled: …` or `given`.
    pub beta_source: String,
}

impl Constants {
    pub fn new(beta: f64, loss: &Loss, labels: &[f64], beta_source: &str) -> Result<Self> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::domain("beta must be finite and non-negative"));
        }
        let beta_hat = loss.beta_hat(labels);
        Ok(Constants {
            beta,
            beta_hat,
            beta_tilde: beta_hat * beta + loss.grad_norm_at_zero(labels),
            beta_source: beta_source.to_string(),
        })
    }

    /// β from a closed form when one is known, otherwise sampled
    /// (block by block for separable models).
    pub fn for_problem(
        model: &NetworkModel,
        data: &Dataset,
        loss: &Loss,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if let Some((beta, how)) = analytic_beta(model, data) {
            return Self::new(beta, loss, data.labels(), &format!("analytic: {how}"));
        }
        let (beta, how) = if model.blocks().len() > 1 {
            (
                models::beta_separable(model, data, n_samples, seed, models::BETA_SAFETY)?,
                "per-block sphere",
            )
        } else {
            (
                models::beta_estimate(model, data, n_samples, seed, models::BETA_SAFETY)?,
                "sphere",
            )
        };
        Self::new(
            beta,
            loss,
            data.labels(),
            &format!(
                "sampled: {how}, {n_samples} draws, seed {seed}, safety {}",
                models::BETA_SAFETY
            ),
        )
    }

    pub fn rate(&self) -> f64 {
        4.0 * self.beta * self.beta_tilde
    }

    /// `ln C / (4ββ̃)`; requires `C > 1` and a positive rate.
    pub fn t_bar(&self, c: f64) -> Result<f64> {
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::domain(format!("C must exceed 1, got {c}")));
        }
        if !(self.rate() > 0.0) {
            return Err(Error::Degenerate("growth rate 4ββ̃ is zero".into()));
        }
        Ok(c.ln() / self.rate())
    }

    /// `δ²·e^{4ββ̃t}`
    pub fn envelope(&self, delta: f64, t: f64) -> f64 {
        delta * delta * (self.rate() * t).exp()
    }
}

/// `β` in closed form: a single-neuron squared-ReLU model on one sample has
/// `sup_{‖u‖=1} σ(uᵀx)² = max(1, α²)·‖x‖²`.
fn analytic_beta(model: &NetworkModel, data: &Dataset) -> Option<(f64, &'static str)> {
    match model.kind() {
        ModelKind::SquaredRelu { alpha, signs } if signs.len() == 1 && data.len() == 1 => {
            let x = data.x(0);
            Some((
                alpha.abs().max(1.0).powi(2) * crate::linalg::norm_sq(x),
                "single squared-ReLU neuron, single input: max(1, a^2)|x|^2",
            ))
        }
        _ => None,
    }
}

/// `max_t ‖w(t)‖² − δ²e^{4ββ̃t}` over recorded rows with `‖w(t)‖ ≤ 1`.
/// Rows of a rescaled trajectory (coordinates `w/delta`) are mapped back to
/// `w` first. Returns `-∞` when no row qualifies.
pub fn norm_growth_check(traj: &Trajectory, constants: &Constants, delta: f64) -> f64 {
    let to_w = if traj.meta.coordinates == "w/delta" {
        delta
    } else {
        1.0
    };
    traj.records
        .iter()
        .map(|r| (r.t, r.norm_w * to_w))
        .filter(|&(_, n)| n <= 1.0)
        .map(|(t, n)| n * n - constants.envelope(delta, t))
        .fold(f64::NEG_INFINITY, f64::max)
}
