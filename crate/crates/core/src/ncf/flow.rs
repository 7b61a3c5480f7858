use crate::error::{Error, FlowError};
use crate::flow::{run_field, IntegratorConfig, StepView, VectorField};
use crate::linalg;
use crate::models::{KinkPolicy, WeightVector};
use crate::ncf::NcfProblem;
use crate::trajectory::{content_hash, Trajectory, TrajectoryMeta};

/// Time-dependent perturbation `f(t)` of the correlation weights.
pub type Forcing<'a> = &'a dyn Fn(f64, &mut [f64]);

/// `u̇ = Σᵢ (zᵢ + fᵢ(t))·∂H(xᵢ; u)`, monitoring the unforced `N_z(u)`.
struct NcfField<'a> {
    problem: &'a NcfProblem,
    policy: KinkPolicy,
    forcing: Option<Forcing<'a>>,
    coeffs: Vec<f64>,
}

impl VectorField for NcfField<'_> {
    fn velocity(&mut self, t: f64, u: &[f64], out: &mut [f64]) -> f64 {
        match self.forcing {
            None => self.problem.grad_into(u, &self.policy, out),
            Some(f) => {
                f(t, &mut self.coeffs);
                for (c, z) in self.coeffs.iter_mut().zip(self.problem.z()) {
                    *c += z;
                }
                self.problem.model().weighted_subgrad_into(
                    self.problem.data(),
                    u,
                    &self.coeffs,
                    &self.policy,
                    out,
                );
            }
        }
        self.problem.value_unchecked(u)
    }

    fn ascent(&self) -> bool {
        true
    }

    fn kink(&self, u: &[f64]) -> bool {
        self.problem
            .model()
            .kink_near_any(self.problem.data(), u, self.policy.tau_kink)
    }
}

fn run(
    p: &NcfProblem,
    u0: &WeightVector,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    forcing: Option<Forcing>,
    refs: Option<Vec<Option<Vec<f64>>>>,
    monitor: &mut dyn FnMut(&StepView),
) -> Result<Trajectory, FlowError> {
    let u = u0.values();
    p.model().check_weights(u)?;
    if !linalg::all_finite(u) {
        return Err(Error::domain("u0 must be finite").into());
    }
    policy.validate(p.model().alpha())?;
    let meta = TrajectoryMeta {
        config_hash: content_hash(&(p, integ, policy, forcing.is_some())),
        seed: integ.seed,
        degenerate: p.is_degenerate(),
        ..TrajectoryMeta::for_model(
            if forcing.is_some() { "ncf-forced" } else { "ncf" },
            p.model(),
            "u",
        )
    };
    let mut field = NcfField {
        problem: p,
        policy: *policy,
        forcing,
        coeffs: vec![0.0; p.z().len()],
    };
    run_field(
        &mut field,
        u,
        integ,
        p.model().blocks(),
        refs,
        forcing.is_none(),
        meta,
        monitor,
    )
}

/// Positive flow `u̇ ∈ ∂N(u)`, `u(0) = u₀`. With `z = 0` the trajectory is
/// constant and flagged degenerate.
pub fn ncf_flow(
    p: &NcfProblem,
    u0: &WeightVector,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
) -> Result<Trajectory, FlowError> {
    run(p, u0, integ, policy, None, None, &mut |_| {})
}

/// [`ncf_flow`] with explicit per-block reference directions for the
/// recorded cosines and a per-step monitor.
pub fn ncf_flow_with_refs(
    p: &NcfProblem,
    u0: &WeightVector,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    refs: Option<Vec<Option<Vec<f64>>>>,
    monitor: &mut dyn FnMut(&StepView),
) -> Result<Trajectory, FlowError> {
    run(p, u0, integ, policy, None, refs, monitor)
}

/// The flow with correlation weights `z + f(t)`.
pub fn ncf_flow_forced(
    p: &NcfProblem,
    u0: &WeightVector,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    forcing: Forcing,
) -> Result<Trajectory, FlowError> {
    run(p, u0, integ, policy, Some(forcing), None, &mut |_| {})
}
