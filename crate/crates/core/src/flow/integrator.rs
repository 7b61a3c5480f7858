//! Explicit Euler integration of `ẇ = F(t, w)` with per-step monitoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError, Result};
use crate::linalg;
use crate::models::Block;
use crate::trajectory::{FlowStats, Record, Trajectory, TrajectoryMeta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    /// `w ← w + h·F(w)` with constant `h`: plain gradient descent.
    FixedEuler { step: f64 },
    /// Euler with a monotonicity guard: a step that moves the monitored value
    /// the wrong way by more than `1e-12·scale` is retried at half the size,
    /// and the size doubles (up to `max_step`) after `growth_after` clean steps.
    AdaptiveEuler {
        initial_step: f64,
        max_step: f64,
        #[serde(default = "default_growth_after")]
        growth_after: usize,
    },
}

fn default_growth_after() -> usize {
    50
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Steps(usize),
    Time(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: Scheme,
    pub horizon: Horizon,
    /// Full state snapshot every this many steps (and on the last step).
    #[serde(default = "one")]
    pub record_every: usize,
    /// Diagnostic row every this many steps (and on the last step).
    #[serde(default = "one")]
    pub summary_every: usize,
    #[serde(default = "default_min_step")]
    pub min_step: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_min_step() -> f64 {
    1e-14
}

/// Relative tolerance of the monotonicity guard and of the step statistics.
pub(crate) const GUARD_TOL: f64 = 1e-12;

impl IntegratorConfig {
    pub fn fixed(step: f64, horizon: Horizon) -> Self {
        IntegratorConfig {
            scheme: Scheme::FixedEuler { step },
            horizon,
            record_every: 1,
            summary_every: 1,
            min_step: default_min_step(),
            seed: 0,
        }
    }

    pub fn adaptive(initial_step: f64, max_step: f64, horizon: Horizon) -> Self {
        IntegratorConfig {
            scheme: Scheme::AdaptiveEuler {
                initial_step,
                max_step,
                growth_after: default_growth_after(),
            },
            ..Self::fixed(initial_step, horizon)
        }
    }

    pub fn with_thinning(mut self, record_every: usize, summary_every: usize) -> Self {
        self.record_every = record_every;
        self.summary_every = summary_every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive and finite")))
            }
        };
        match self.scheme {
            Scheme::FixedEuler { step } => pos(step, "step")?,
            Scheme::AdaptiveEuler {
                initial_step,
                max_step,
                growth_after,
            } => {
                pos(initial_step, "initial_step")?;
                pos(max_step, "max_step")?;
                if initial_step > max_step {
                    return Err(Error::Config("initial_step exceeds max_step".into()));
                }
                if growth_after == 0 {
                    return Err(Error::Config("growth_after must be at least 1".into()));
                }
            }
        }
        match self.horizon {
            Horizon::Steps(n) if n == 0 => {
                return Err(Error::Config("horizon must be at least one step".into()))
            }
            Horizon::Time(t) => pos(t, "time horizon")?,
            _ => {}
        }
        if self.record_every == 0 || self.summary_every == 0 {
            return Err(Error::Config("record_every and summary_every must be >= 1".into()));
        }
        pos(self.min_step, "min_step")
    }

    /// Nominal step size (the initial one for adaptive schemes).
    pub fn step(&self) -> f64 {
        match self.scheme {
            Scheme::FixedEuler { step } => step,
            Scheme::AdaptiveEuler { initial_step, .. } => initial_step,
        }
    }

    /// Same scheme and thinning, different horizon.
    pub fn with_horizon(&self, horizon: Horizon) -> Self {
        IntegratorConfig {
            horizon,
            ..self.clone()
        }
    }
}

/// Right-hand side of a flow together with the scalar it monitors.
pub(crate) trait VectorField {
    /// Writes `F(t, w)` into `out` and returns the monitored value at `w`.
    fn velocity(&mut self, t: f64, w: &[f64], out: &mut [f64]) -> f64;
    /// Whether the monitored value should rise (NCF) or fall (loss).
    fn ascent(&self) -> bool;
    fn kink(&self, w: &[f64]) -> bool;
}

/// What an observer sees after each accepted step (and at `t = 0`).
pub struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub h: f64,
    pub w: &'a [f64],
    pub value: f64,
    pub kink: bool,
    pub last: bool,
}

#[derive(Debug)]
pub(crate) enum Failure {
    Stiff {
        t: f64,
        min_step: f64,
        last: Vec<f64>,
    },
    Divergence {
        step: usize,
        t: f64,
        last: Vec<f64>,
    },
}

impl Failure {
    pub(crate) fn last_state(&self) -> &[f64] {
        match self {
            Failure::Stiff { last, .. } | Failure::Divergence { last, .. } => last,
        }
    }

    pub(crate) fn into_flow_error(self, partial: Trajectory) -> FlowError {
        match self {
            Failure::Stiff { t, min_step, .. } => FlowError::Stiff {
                min_step,
                t,
                partial: Box::new(partial),
            },
            Failure::Divergence { step, t, .. } => FlowError::Divergence {
                step,
                t,
                partial: Box::new(partial),
            },
        }
    }
}

fn wrong_way(ascent: bool, before: f64, after: f64) -> f64 {
    if ascent {
        before - after
    } else {
        after - before
    }
}

/// Integrates from `w0`, reporting every accepted step to `recorder` and then
/// to `monitor`.
pub(crate) fn integrate<F: VectorField>(
    field: &mut F,
    w0: &[f64],
    cfg: &IntegratorConfig,
    recorder: &mut Recorder,
    monitor: &mut dyn FnMut(&StepView),
) -> std::result::Result<(), Failure> {
    let k = w0.len();
    let mut w = w0.to_vec();
    let mut trial = vec![0.0; k];
    let mut vel = vec![0.0; k];
    let mut vel_trial = vec![0.0; k];
    let mut value = field.velocity(0.0, &w, &mut vel);
    if !linalg::all_finite(&w) || !value.is_finite() || !linalg::all_finite(&vel) {
        return Err(Failure::Divergence {
            step: 0,
            t: 0.0,
            last: w,
        });
    }
    let ascent = field.ascent();
    let mut emit = |view: &StepView| {
        recorder.observe(view);
        monitor(view);
    };
    emit(&StepView {
        step: 0,
        t: 0.0,
        h: 0.0,
        w: &w,
        value,
        kink: field.kink(&w),
        last: false,
    });

    let (mut h, max_h, growth_after, guarded) = match cfg.scheme {
        Scheme::FixedEuler { step } => (step, step, usize::MAX, false),
        Scheme::AdaptiveEuler {
            initial_step,
            max_step,
            growth_after,
        } => (initial_step, max_step, growth_after, true),
    };
    let nominal = h;
    let mut t = 0.0;
    let mut step = 0usize;
    let mut clean = 0usize;
    loop {
        // step size and end-of-horizon handling
        let (h_now, last) = match cfg.horizon {
            Horizon::Steps(n) => (h, step + 1 == n),
            Horizon::Time(t_end) => {
                let remaining = t_end - t;
                if remaining <= h * (1.0 + 1e-9) {
                    (remaining, true)
                } else {
                    (h, false)
                }
            }
        };
        trial.copy_from_slice(&w);
        linalg::axpy(h_now, &vel, &mut trial);
        // fixed steps land exactly on k·h
        let t_next = if guarded {
            t + h_now
        } else {
            match cfg.horizon {
                Horizon::Time(t_end) if last => t_end,
                _ => (step + 1) as f64 * nominal,
            }
        };
        if !linalg::all_finite(&trial) {
            return Err(Failure::Divergence {
                step: step + 1,
                t: t_next,
                last: w,
            });
        }
        let value_next = field.velocity(t_next, &trial, &mut vel_trial);
        if !value_next.is_finite() || !linalg::all_finite(&vel_trial) {
            return Err(Failure::Divergence {
                step: step + 1,
                t: t_next,
                last: w,
            });
        }
        if guarded {
            let scale = value.abs().max(value_next.abs());
            if wrong_way(ascent, value, value_next) > GUARD_TOL * scale {
                h *= 0.5;
                clean = 0;
                if h < cfg.min_step {
                    return Err(Failure::Stiff {
                        t,
                        min_step: cfg.min_step,
                        last: w,
                    });
                }
                continue;
            }
        }
        std::mem::swap(&mut w, &mut trial);
        std::mem::swap(&mut vel, &mut vel_trial);
        value = value_next;
        t = t_next;
        step += 1;
        emit(&StepView {
            step,
            t,
            h: h_now,
            w: &w,
            value,
            kink: field.kink(&w),
            last,
        });
        if last {
            return Ok(());
        }
        if guarded {
            clean += 1;
            if clean >= growth_after {
                h = (2.0 * h).min(max_h);
                clean = 0;
            }
        }
    }
}

/// Builds a [`Trajectory`] from step views: thinned diagnostic rows and
/// snapshots plus statistics over every step.
pub(crate) struct Recorder {
    blocks: Vec<Block>,
    refs: Vec<Option<Vec<f64>>>,
    record_every: usize,
    summary_every: usize,
    ascent: bool,
    rayleigh: bool,
    records: Vec<Record>,
    stats: FlowStats,
    prev: Option<(f64, f64)>,
    pending_kink: bool,
}

impl Recorder {
    /// `refs[i]` is the reference direction of block `i`; `None` uses the
    /// block's direction at the first step. `rayleigh` also tracks
    /// `value/‖w‖²`, which NCF flows keep nondecreasing.
    pub(crate) fn new(
        blocks: &[Block],
        refs: Option<Vec<Option<Vec<f64>>>>,
        cfg: &IntegratorConfig,
        ascent: bool,
        rayleigh: bool,
    ) -> Self {
        Recorder {
            blocks: blocks.to_vec(),
            refs: refs.unwrap_or_else(|| vec![None; blocks.len()]),
            record_every: cfg.record_every,
            summary_every: cfg.summary_every,
            ascent,
            rayleigh,
            records: Vec::new(),
            stats: FlowStats::default(),
            prev: None,
            pending_kink: false,
        }
    }

    fn observe(&mut self, v: &StepView) {
        let nsq = linalg::norm_sq(v.w);
        let norm = nsq.sqrt();
        let ray = if nsq > 0.0 { v.value / nsq } else { 0.0 };
        let s = &mut self.stats;
        if let Some((pv, pr)) = self.prev {
            s.steps += 1;
            let drop = wrong_way(self.ascent, pv, v.value);
            let scale = pv.abs().max(v.value.abs());
            if drop > 0.0 {
                let rel = if scale > 0.0 { drop / scale } else { f64::INFINITY };
                s.max_backstep = s.max_backstep.max(rel);
                if drop > GUARD_TOL * scale {
                    s.backsteps += 1;
                }
            }
            if self.rayleigh && nsq > 0.0 {
                let drop = pr - ray;
                let scale = pr.abs().max(ray.abs());
                if drop > 0.0 {
                    let rel = if scale > 0.0 { drop / scale } else { f64::INFINITY };
                    s.max_rayleigh_backstep = s.max_rayleigh_backstep.max(rel);
                    if drop > GUARD_TOL * scale {
                        s.rayleigh_backsteps += 1;
                    }
                }
            }
            s.min_norm = s.min_norm.min(norm);
            s.max_norm = s.max_norm.max(norm);
        } else {
            s.min_norm = norm;
            s.max_norm = norm;
            for (r, b) in self.refs.iter_mut().zip(&self.blocks) {
                if r.is_none() {
                    *r = linalg::normalized(&v.w[b.range()]);
                }
            }
        }
        if v.kink {
            s.kink_steps += 1;
        }
        self.prev = Some((v.value, ray));
        self.pending_kink |= v.kink;

        if v.step % self.summary_every == 0 || v.last {
            let mut block_norms = Vec::with_capacity(self.blocks.len());
            let mut block_cos = Vec::with_capacity(self.blocks.len());
            for (b, r) in self.blocks.iter().zip(&self.refs) {
                let wb = &v.w[b.range()];
                let bn = linalg::norm(wb);
                block_norms.push(bn);
                block_cos.push(match r {
                    Some(r) if bn > 0.0 => linalg::dot(wb, r) / bn,
                    _ => 0.0,
                });
            }
            let snapshot = v.step % self.record_every == 0 || v.last;
            self.records.push(Record {
                t: v.t,
                step: v.step,
                loss: v.value,
                norm_w: norm,
                block_norms,
                block_cos,
                kink_flag: std::mem::take(&mut self.pending_kink),
                w: snapshot.then(|| v.w.to_vec()),
            });
        }
    }

    /// Trajectory so far. After a failure the last accepted state is
    /// attached to the final row so the partial run can be inspected.
    pub(crate) fn finish(mut self, meta: TrajectoryMeta, last_state: Option<&[f64]>) -> Trajectory {
        if let (Some(r), Some(w)) = (self.records.last_mut(), last_state) {
            if r.w.is_none() {
                r.w = Some(w.to_vec());
            }
        }
        Trajectory {
            meta,
            records: self.records,
            stats: self.stats,
        }
    }

}

/// Integrates `field` from `w0` and packages the result as a trajectory,
/// keeping the partial record on failure.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_field<F: VectorField>(
    field: &mut F,
    w0: &[f64],
    cfg: &IntegratorConfig,
    blocks: &[Block],
    refs: Option<Vec<Option<Vec<f64>>>>,
    rayleigh: bool,
    meta: TrajectoryMeta,
    monitor: &mut dyn FnMut(&StepView),
) -> std::result::Result<Trajectory, FlowError> {
    cfg.validate()?;
    let mut rec = Recorder::new(blocks, refs, cfg, field.ascent(), rayleigh);
    match integrate(field, w0, cfg, &mut rec, monitor) {
        Ok(()) => Ok(rec.finish(meta, None)),
        Err(f) => {
            let partial = rec.finish(meta, Some(f.last_state()));
            Err(f.into_flow_error(partial))
        }
    }
}
