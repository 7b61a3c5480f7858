use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{KinkPolicy, Slope};
use crate::ncf::NcfProblem;

/// Default tolerance for calling a point KKT and its objective non-negative.
pub const TOL_KKT: f64 = 1e-6;

/// First-order optimality of `u` for `max N(u)` subject to `‖u‖ = 1`:
/// `g = λu` with `g ∈ ∂N(u)` and `λ = 2N(u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub u: Vec<f64>,
    pub objective: f64,
    pub lambda: f64,
    /// `‖g − λu‖₂`; the minimum over the kink scan when one was run.
    pub residual: f64,
    pub nonneg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<KinkScan>,
}

/// Residuals under the configured kink slope and under each global slope
/// `σ′(0) ∈ {α, (1+α)/2, 1}`. A single slope is applied to every kink, so
/// the minimum over-approximates the distance from `λu` to the true set
/// `∂N(u)`; it is exact when at most one kink is active or all agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinkScan {
    pub policy_residual: f64,
    pub slopes: [f64; 3],
    pub residuals: [f64; 3],
    pub over_approximation: bool,
}

impl KktReport {
    pub fn is_kkt(&self, tol: f64) -> bool {
        self.residual <= tol
    }
}

fn unit_input(p: &NcfProblem, u: &[f64]) -> Result<Vec<f64>> {
    p.model().check_weights(u)?;
    if !linalg::all_finite(u) {
        return Err(Error::domain("direction must be finite"));
    }
    let n = linalg::norm(u);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("direction must be unit norm, got {n}")));
    }
    Ok(linalg::scaled(u, 1.0 / n))
}

fn residual_with(p: &NcfProblem, u: &[f64], objective: f64, slope: Slope) -> f64 {
    let mut g = vec![0.0; u.len()];
    p.model()
        .weighted_subgrad_slope(p.data(), u, p.z(), slope, &mut g);
    linalg::axpy(-2.0 * objective, u, &mut g);
    linalg::norm(&g)
}

fn report(u: Vec<f64>, objective: f64, residual: f64, scan: Option<KinkScan>) -> KktReport {
    KktReport {
        u,
        objective,
        lambda: 2.0 * objective,
        residual,
        nonneg: objective >= -TOL_KKT,
        scan,
    }
}

/// KKT residual of the unit vector `u` under `policy`.
pub fn kkt_residual(p: &NcfProblem, u: &[f64], policy: &KinkPolicy) -> Result<KktReport> {
    let u = unit_input(p, u)?;
    policy.validate(p.model().alpha())?;
    let objective = p.value_unchecked(&u);
    let r = residual_with(
        p,
        &u,
        objective,
        Slope::exact(policy.slope_at_zero(p.model().alpha())),
    );
    Ok(report(u, objective, r, None))
}

/// As [`kkt_residual`], additionally minimizing over the three global kink
/// slopes. Pre-activations within `policy.tau_kink` (relative) of zero count
/// as kinks in the scan, so rounding does not hide a kink.
pub fn kkt_residual_scan(p: &NcfProblem, u: &[f64], policy: &KinkPolicy) -> Result<KktReport> {
    let base = kkt_residual(p, u, policy)?;
    let alpha = p.model().alpha();
    let slopes = KinkPolicy::scan_family(alpha).map(|k| k.slope_at_zero(alpha));
    let residuals = slopes.map(|s| {
        residual_with(
            p,
            &base.u,
            base.objective,
            Slope {
                at_zero: s,
                snap: policy.tau_kink,
            },
        )
    });
    let best = residuals.iter().copied().fold(base.residual, f64::min);
    let scan = KinkScan {
        policy_residual: base.residual,
        slopes,
        residuals,
        over_approximation: true,
    };
    Ok(report(base.u, base.objective, best, Some(scan)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Dataset, NetworkModel};

    #[test]
    fn inactive_neuron_is_trivially_kkt() {
        // α = 0 and every pre-activation negative at u = e₁
        let data = Dataset::new(2, vec![-1.0, 0.0, -0.5, 0.5], vec![1.0, -2.0]).unwrap();
        let p = NcfProblem::new(NetworkModel::two_layer(0.0, 1, 2), data.clone(), vec![1.0, -2.0])
            .unwrap();
        let r = kkt_residual(&p, &[0.0, 1.0, 0.0], &KinkPolicy::default()).unwrap();
        assert_eq!((r.residual, r.objective), (0.0, 0.0));
        let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), data, vec![1.0, -2.0]).unwrap();
        let r = kkt_residual(&p, &[1.0, 0.0], &KinkPolicy::default()).unwrap();
        assert_eq!((r.residual, r.objective), (0.0, 0.0));
        assert!(r.nonneg);
        assert_eq!(r.lambda, 2.0 * r.objective);
    }

    #[test]
    fn preconditions() {
        let data = Dataset::new(1, vec![1.0], vec![1.0]).unwrap();
        let p = NcfProblem::new(NetworkModel::squared_relu(1, 1), data, vec![1.0]).unwrap();
        let k = KinkPolicy::default();
        assert!(kkt_residual(&p, &[2.0], &k).is_err());
        assert!(kkt_residual(&p, &[f64::NAN], &k).is_err());
        assert!(kkt_residual(&p, &[1.0 + 1e-10], &k).is_ok());
    }

    #[test]
    fn scan_recovers_a_kink_selection() {
        // f(a, b) = a|b| at (1, 0): 0 ∈ ∂f only with σ′(0) = 0, which for
        // α = −1 is the midpoint (1+α)/2 and also the default.
        let model = NetworkModel::u1_abs_u2();
        let data = Dataset::new(1, vec![1.0], vec![1.0]).unwrap();
        let p = NcfProblem::new(model, data, vec![1.0]).unwrap();
        let off = KinkPolicy::with_value(1.0);
        assert_eq!(kkt_residual(&p, &[1.0, 0.0], &off).unwrap().residual, 1.0);
        let r = kkt_residual_scan(&p, &[1.0, 0.0], &off).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.scan.unwrap().policy_residual, 1.0);
    }

    #[test]
    fn json_shape() {
        let r = report(vec![1.0, 0.0], 0.5, 0.0, None);
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys, vec!["lambda", "nonneg", "objective", "residual", "u"]);
    }
}
