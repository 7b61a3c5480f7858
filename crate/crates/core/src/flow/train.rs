use crate::error::{Error, FlowError};
use crate::flow::integrator::run_field;
use crate::flow::{IntegratorConfig, Loss, StepView, VectorField};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel, WeightVector};
use crate::trajectory::{content_hash, Trajectory, TrajectoryMeta};

/// Negative loss gradient `−Σᵢ ℓ′(H(xᵢ; w), yᵢ)·∂H(xᵢ; w)`, optionally in
/// rescaled coordinates `v = w/δ`.
///
/// In `v` the same flow reads `v̇ = −δ^{L−2}·Σᵢ ℓ′(δ^L·H(xᵢ; v), yᵢ)·∂H(xᵢ; v)`
/// by homogeneity of `H` and its subgradient, so one Euler step in `v` is an
/// Euler step in `w` divided by `δ`.
pub struct TrainField<'a> {
    model: &'a NetworkModel,
    data: &'a Dataset,
    loss: Loss,
    policy: KinkPolicy,
    /// `δ^L` applied to outputs, `δ^{L−2}` applied to the velocity.
    out_scale: f64,
    vel_scale: f64,
    yhat: Vec<f64>,
    coeffs: Vec<f64>,
}

impl<'a> TrainField<'a> {
    pub fn new(
        model: &'a NetworkModel,
        data: &'a Dataset,
        loss: Loss,
        policy: KinkPolicy,
        delta: Option<f64>,
    ) -> Result<Self, Error> {
        model.check_data(data)?;
        policy.validate(model.alpha())?;
        let (out_scale, vel_scale) = match delta {
            None => (1.0, 1.0),
            Some(d) => {
                let l = model.degree() as i32;
                (d.powi(l), d.powi(l - 2))
            }
        };
        Ok(TrainField {
            model,
            data,
            loss,
            policy,
            out_scale,
            vel_scale,
            yhat: vec![0.0; data.len()],
            coeffs: vec![0.0; data.len()],
        })
    }

    /// Training loss at `w` (in the field's coordinates).
    pub fn loss_at(&mut self, w: &[f64]) -> f64 {
        self.outputs(w);
        self.loss.value_unchecked(&self.yhat, self.data.labels())
    }

    fn outputs(&mut self, w: &[f64]) {
        self.model.eval_into(self.data, w, &mut self.yhat);
        if self.out_scale != 1.0 {
            self.yhat.iter_mut().for_each(|v| *v *= self.out_scale);
        }
    }
}

impl VectorField for TrainField<'_> {
    fn velocity(&mut self, _t: f64, w: &[f64], out: &mut [f64]) -> f64 {
        self.outputs(w);
        let y = self.data.labels();
        let c = self.loss.scale(y.len());
        for ((k, &p), &t) in self.coeffs.iter_mut().zip(&self.yhat).zip(y) {
            *k = -self.vel_scale * c * self.loss.kind.derivative(p, t);
        }
        self.model
            .weighted_subgrad_into(self.data, w, &self.coeffs, &self.policy, out);
        self.loss.value_unchecked(&self.yhat, y)
    }

    fn ascent(&self) -> bool {
        false
    }

    fn kink(&self, w: &[f64]) -> bool {
        self.model.kink_near_any(self.data, w, self.policy.tau_kink)
    }
}

fn unit_start(w0: &WeightVector) -> Result<Vec<f64>, Error> {
    let n = linalg::norm(w0.values());
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::domain("w0 must be finite and nonzero"));
    }
    if (n - 1.0).abs() > 1e-12 {
        log::warn!("w0 has norm {n}; renormalizing to the unit sphere");
        return Ok(linalg::scaled(w0.values(), 1.0 / n));
    }
    Ok(w0.values().to_vec())
}

fn check_delta(delta: f64) -> Result<(), Error> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("delta must be positive, got {delta}")))
    }
}

fn meta(
    label: &str,
    model: &NetworkModel,
    loss: &Loss,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    coordinates: &str,
    delta: Option<f64>,
) -> TrajectoryMeta {
    TrajectoryMeta {
        config_hash: content_hash(&(loss, integ, policy, delta)),
        seed: integ.seed,
        delta,
        ..TrajectoryMeta::for_model(label, model, coordinates)
    }
}

/// Training gradient flow `ẇ ∈ −∂L(w)`, `w(0) = δ·w₀`. With a fixed step this
/// is plain full-batch gradient descent.
pub fn train_flow(
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    w0: &WeightVector,
    delta: f64,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
) -> Result<Trajectory, FlowError> {
    check_delta(delta)?;
    model.check_weights(w0.values())?;
    let start = linalg::scaled(&unit_start(w0)?, delta);
    let m = meta("train", model, &loss, integ, policy, "w", Some(delta));
    train_flow_from(model, data, loss, &start, integ, policy, m, &mut |_| {})
}

/// The training flow from an arbitrary starting point, e.g. a perturbed
/// saddle. `monitor` sees every accepted step.
#[allow(clippy::too_many_arguments)]
pub fn train_flow_from(
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    w_init: &[f64],
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    meta: TrajectoryMeta,
    monitor: &mut dyn FnMut(&StepView),
) -> Result<Trajectory, FlowError> {
    model.check_weights(w_init)?;
    let mut field = TrainField::new(model, data, loss, *policy, None)?;
    run_field(
        &mut field,
        w_init,
        integ,
        model.blocks(),
        None,
        false,
        meta,
        monitor,
    )
}

/// The training flow in coordinates `v = w/δ`, starting at `v(0) = w₀`.
/// `v` stays of order one however small `δ` is.
pub fn rescaled_train_flow(
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    w0: &WeightVector,
    delta: f64,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
) -> Result<Trajectory, FlowError> {
    check_delta(delta)?;
    model.check_weights(w0.values())?;
    let start = unit_start(w0)?;
    let mut field = TrainField::new(model, data, loss, *policy, Some(delta))?;
    let m = meta("train-rescaled", model, &loss, integ, policy, "w/delta", Some(delta));
    run_field(
        &mut field,
        &start,
        integ,
        model.blocks(),
        None,
        false,
        m,
        &mut |_| {},
    )
}
