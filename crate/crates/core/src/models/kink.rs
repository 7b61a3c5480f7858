use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Selection rule for the activation derivative at an exact kink.
///
/// `relu_zero_value = None` uses the default: `0` for ReLU (`α = 0`) and
/// `(1+α)/2` otherwise. An explicit value must lie in the Clarke interval
/// `[min(α,1), max(α,1)]` of the activation `max(s, αs)` at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinkPolicy {
    #[serde(default)]
    pub relu_zero_value: Option<f64>,
    #[serde(default = "default_tau")]
    pub tau_kink: f64,
}

fn default_tau() -> f64 {
    1e-9
}

impl Default for KinkPolicy {
    fn default() -> Self {
        KinkPolicy {
            relu_zero_value: None,
            tau_kink: default_tau(),
        }
    }
}

impl KinkPolicy {
    pub fn with_value(value: f64) -> Self {
        KinkPolicy {
            relu_zero_value: Some(value),
            ..Default::default()
        }
    }

    pub fn slope_at_zero(&self, alpha: f64) -> f64 {
        match self.relu_zero_value {
            Some(v) => v,
            None if alpha == 0.0 => 0.0,
            None => 0.5 * (1.0 + alpha),
        }
    }

    pub fn validate(&self, alpha: f64) -> Result<()> {
        if !(self.tau_kink > 0.0) {
            return Err(Error::domain("tau_kink must be positive"));
        }
        let v = self.slope_at_zero(alpha);
        let (lo, hi) = (alpha.min(1.0), alpha.max(1.0));
        if !(lo..=hi).contains(&v) {
            return Err(Error::domain(format!(
                "kink slope {v} outside the Clarke interval [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// The three-point family `{α, (1+α)/2, 1}` used by the KKT residual scan.
    pub fn scan_family(alpha: f64) -> [KinkPolicy; 3] {
        [alpha, 0.5 * (1.0 + alpha), 1.0].map(KinkPolicy::with_value)
    }
}
