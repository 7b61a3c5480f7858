use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `ℓ(ŷ, y) = ½(ŷ − y)²`
    Square,
    /// `ℓ(ŷ, y) = ln(1 + e^{−ŷy})`
    Logistic,
}

/// How per-sample losses are combined. `Sum` is `L = Σᵢ ℓ`; `Mean` is `L/n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Loss {
    pub kind: LossKind,
    #[serde(default)]
    pub reduction: Reduction,
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + e^{−x})` without overflow.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LossKind {
    pub fn value(self, yhat: f64, y: f64) -> f64 {
        match self {
            LossKind::Square => 0.5 * (yhat - y) * (yhat - y),
            LossKind::Logistic => softplus(-yhat * y),
        }
    }

    /// `∂ℓ/∂ŷ`
    pub fn derivative(self, yhat: f64, y: f64) -> f64 {
        match self {
            LossKind::Square => yhat - y,
            LossKind::Logistic => -y * sigmoid(-yhat * y),
        }
    }
}

fn check_lengths(yhat: &[f64], y: &[f64]) -> Result<()> {
    if yhat.len() != y.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            yhat.len(),
            y.len()
        )));
    }
    Ok(())
}

impl Loss {
    pub fn sum(kind: LossKind) -> Self {
        Loss {
            kind,
            reduction: Reduction::Sum,
        }
    }

    pub fn mean(kind: LossKind) -> Self {
        Loss {
            kind,
            reduction: Reduction::Mean,
        }
    }

    pub fn scale(&self, n: usize) -> f64 {
        match self.reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / n as f64,
        }
    }

    pub fn value(&self, yhat: &[f64], y: &[f64]) -> Result<f64> {
        check_lengths(yhat, y)?;
        Ok(self.value_unchecked(yhat, y))
    }

    pub(crate) fn value_unchecked(&self, yhat: &[f64], y: &[f64]) -> f64 {
        let s: f64 = yhat
            .iter()
            .zip(y)
            .map(|(&p, &t)| self.kind.value(p, t))
            .sum();
        self.scale(y.len()) * s
    }

    /// `ℓ′(ŷ, y)`, the gradient of the total loss with respect to the outputs.
    pub fn residual_grad(&self, yhat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_lengths(yhat, y)?;
        let c = self.scale(y.len());
        Ok(yhat
            .iter()
            .zip(y)
            .map(|(&p, &t)| c * self.kind.derivative(p, t))
            .collect())
    }

    /// `−ℓ′(0, y)`: the correlation vector of the NCF at the origin.
    pub fn neg_grad_at_zero(&self, y: &[f64]) -> Vec<f64> {
        let c = self.scale(y.len());
        y.iter().map(|&t| -c * self.kind.derivative(0.0, t)).collect()
    }

    /// Lipschitz constant of `ℓ′(·, y)`. Square: 1. Logistic: `maxᵢ yᵢ²/4`,
    /// the bound on `∂²ℓ/∂ŷ² = y²σ(s)(1 − σ(s))`. Both hold globally, so they
    /// hold on the ball `‖ŷ‖ ≤ β` for any `β`.
    pub fn beta_hat(&self, y: &[f64]) -> f64 {
        let c = self.scale(y.len());
        match self.kind {
            LossKind::Square => c,
            LossKind::Logistic => c * y.iter().map(|v| v * v / 4.0).fold(0.0, f64::max),
        }
    }

    /// `‖ℓ′(0, y)‖₂`
    pub fn grad_norm_at_zero(&self, y: &[f64]) -> f64 {
        linalg::norm(&self.neg_grad_at_zero(y))
    }
}

/// `Σᵢ ℓ(ŷᵢ, yᵢ)`
pub fn loss_value(kind: LossKind, yhat: &[f64], y: &[f64]) -> Result<f64> {
    Loss::sum(kind).value(yhat, y)
}

/// Elementwise `ℓ′(ŷᵢ, yᵢ)`.
pub fn loss_residual_grad(kind: LossKind, yhat: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    Loss::sum(kind).residual_grad(yhat, y)
}

pub fn beta_hat(kind: LossKind, y: &[f64], beta: f64) -> Result<f64> {
    if !(beta >= 0.0) {
        return Err(Error::domain("beta must be non-negative"));
    }
    Ok(Loss::sum(kind).beta_hat(y))
}
