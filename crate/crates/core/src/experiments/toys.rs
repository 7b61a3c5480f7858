//! Two-parameter examples built on `f(u₁, u₂) = u₁|u₂|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError, Result};
use crate::experiments::HarnessOutput;
use crate::flow::{run_field, Horizon, IntegratorConfig, StepView, VectorField};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel, Slope, WeightVector};
use crate::ncf::{ncf_flow_with_refs, NcfProblem};
use crate::trajectory::{content_hash, TrajectoryMeta};

/// `N(u) = u₁|u₂|` as a correlation function with one sample.
pub fn u1u2_problem() -> NcfProblem {
    NcfProblem::new(
        NetworkModel::u1_abs_u2(),
        Dataset::new(1, vec![1.0], vec![1.0]).expect("one sample"),
        vec![1.0],
    )
    .expect("matching dimensions")
}

/// Solution of `u̇₁ = s·u₂, u̇₂ = s·u₁` with `s = sign u₂(0)`, valid while
/// `u₂` keeps its sign.
pub fn u1u2_closed_form(u0: [f64; 2], t: f64) -> [f64; 2] {
    let s = u0[1].signum();
    let (a, b) = (u0[0], s * u0[1]);
    let (c, sh) = (t.cosh(), t.sinh());
    [a * c + b * sh, s * (a * sh + b * c)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub u0: [f64; 2],
    /// `u₁² − u₂²` at the start.
    pub q0: f64,
    /// `max |Q(t) − Q(0)|` over every step.
    pub conservation_drift: f64,
    /// `max ‖u(t) − u₀‖`.
    pub max_displacement: f64,
    pub stationary: bool,
    /// `max ‖u(t) − closed form‖` while `u₂` keeps its initial sign.
    pub closed_form_error: Option<f64>,
    /// First time `u₂` leaves its initial open half-line with `u₁ ≤ 0`.
    pub entered_stable_set: Option<f64>,
    pub final_u: Vec<f64>,
}

/// Positive flow of `u₁|u₂|` from `u0`.
pub fn toy_u1u2(
    policy: &KinkPolicy,
    u0: [f64; 2],
    integ: &IntegratorConfig,
) -> std::result::Result<HarnessOutput<ToyReport>, FlowError> {
    let p = u1u2_problem();
    let w0 = WeightVector::new(p.model(), u0.to_vec())?;
    let q = |u: &[f64]| u[0] * u[0] - u[1] * u[1];
    let q0 = q(&u0);
    let s0 = u0[1].signum();
    let tracking = u0[1] != 0.0;
    let mut drift = 0.0f64;
    let mut displacement = 0.0f64;
    let mut cf_err = 0.0f64;
    let mut same_sign = tracking;
    let mut entered = None;
    let mut traj = ncf_flow_with_refs(&p, &w0, integ, policy, None, &mut |v: &StepView| {
        drift = drift.max((q(v.w) - q0).abs());
        displacement = displacement.max(linalg::dist(v.w, &u0));
        if same_sign && v.w[1].signum() == s0 && v.w[1] != 0.0 {
            cf_err = cf_err.max(linalg::dist(v.w, &u1u2_closed_form(u0, v.t)));
        } else {
            same_sign = false;
            if entered.is_none() && tracking && v.w[0] <= 0.0 {
                entered = Some(v.t);
            }
        }
    })?;
    traj.meta.label = "u1|u2|".into();
    let report = ToyReport {
        u0,
        q0,
        conservation_drift: drift,
        max_displacement: displacement,
        stationary: displacement == 0.0,
        closed_form_error: tracking.then_some(cf_err),
        entered_stable_set: entered,
        final_u: traj.final_state().expect("final snapshot").to_vec(),
    };
    Ok(HarnessOutput {
        report,
        runs: vec![traj],
    })
}

/// Descent field of `g(u) = (u₁|u₂| − 1)²`.
pub struct EscapeField {
    model: NetworkModel,
    slope: Slope,
    tau: f64,
}

impl EscapeField {
    pub fn new(policy: &KinkPolicy) -> Result<Self> {
        let model = NetworkModel::u1_abs_u2();
        policy.validate(model.alpha())?;
        Ok(EscapeField {
            slope: Slope::exact(policy.slope_at_zero(model.alpha())),
            tau: policy.tau_kink,
            model,
        })
    }

    pub fn value(u: &[f64]) -> f64 {
        (u[0] * u[1].abs() - 1.0).powi(2)
    }

    /// `∇g` with the kink slope applied at `u₂ = 0`.
    pub fn grad(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 2];
        let h = u[0] * u[1].abs();
        self.model
            .accumulate_subgrad(&[1.0], u, 2.0 * (h - 1.0), self.slope, &mut out);
        out
    }
}

impl VectorField for EscapeField {
    fn velocity(&mut self, _t: f64, u: &[f64], out: &mut [f64]) -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let h = u[0] * u[1].abs();
        self.model
            .accumulate_subgrad(&[1.0], u, -2.0 * (h - 1.0), self.slope, out);
        Self::value(u)
    }

    fn ascent(&self) -> bool {
        false
    }

    fn kink(&self, u: &[f64]) -> bool {
        self.model.kink_near(&[1.0], u, self.tau)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EscapeReport {
    pub delta: f64,
    pub step: f64,
    /// `‖u(0.1) − [1, 0]‖`.
    pub distance: f64,
    pub steps: usize,
}

/// Descent flow of `g` from `[1 + δ, δ]` up to `t = 0.1`.
pub fn escape_g(
    delta: f64,
    step: f64,
    policy: &KinkPolicy,
) -> std::result::Result<HarnessOutput<EscapeReport>, FlowError> {
    if !(0.0..0.1).contains(&delta) {
        return Err(Error::domain(format!("delta must lie in [0, 0.1), got {delta}")).into());
    }
    let integ = IntegratorConfig::fixed(step, Horizon::Time(0.1));
    let mut field = EscapeField::new(policy)?;
    let model = NetworkModel::u1_abs_u2();
    let meta = TrajectoryMeta {
        config_hash: content_hash(&(delta, step, policy)),
        delta: Some(delta),
        ..TrajectoryMeta::for_model("escape g", &model, "w")
    };
    let traj = run_field(
        &mut field,
        &[1.0 + delta, delta],
        &integ,
        model.blocks(),
        None,
        false,
        meta,
        &mut |_| {},
    )?;
    let end = traj.final_state().expect("final snapshot");
    let report = EscapeReport {
        delta,
        step,
        distance: linalg::dist(end, &[1.0, 0.0]),
        steps: traj.stats.steps,
    };
    Ok(HarnessOutput {
        report,
        runs: vec![traj],
    })
}

/// [`assumption_ratio`](crate::experiments::assumption_ratio) of `g` at
/// `[1 + γ, γ]` around `[1, 0]`, one value per `γ`.
pub fn escape_ray_ratios(gammas: &[f64]) -> Vec<(f64, f64)> {
    let field = EscapeField::new(&KinkPolicy::default()).expect("default policy");
    let grad = |u: &[f64]| field.grad(u);
    gammas
        .iter()
        .map(|&g| {
            (
                g,
                crate::experiments::assumption_ratio(&grad, &[1.0, 0.0], &[1.0 + g, g]),
            )
        })
        .collect()
}
