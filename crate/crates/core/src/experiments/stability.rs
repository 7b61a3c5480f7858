//! Sensitivity of the NCF flow to a bounded forcing of `z`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError};
use crate::experiments::HarnessOutput;
use crate::flow::IntegratorConfig;
use crate::linalg;
use crate::models::{KinkPolicy, WeightVector};
use crate::ncf::{ncf_flow, ncf_flow_forced, NcfProblem};
use crate::rng;

/// `fᵢ(t) = δ_f·sin((i + 1)t + i)`, so `‖f(t)‖∞ ≤ δ_f`.
pub fn sinusoidal_forcing(delta_f: f64) -> impl Fn(f64, &mut [f64]) + Sync {
    move |t: f64, out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let k = i as f64;
            *o = delta_f * ((k + 1.0) * t + k).sin();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub delta_f: f64,
    /// `sup ‖u_f(t) − u(t)‖` over shared snapshots.
    pub sup_dev: f64,
    /// `10·δ_f·e^{L̂T}`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub t_end: f64,
    /// Largest finite-difference slope of `∂N` along the unforced run.
    pub lipschitz_est: f64,
    /// Rows sorted by decreasing `δ_f`.
    pub rows: Vec<StabilityRow>,
    /// Deviation decreases strictly as `δ_f` decreases (ties allowed at 0).
    pub monotone: bool,
    pub bound_ok: bool,
}

/// Integrates the forced and unforced flows from `u0` on the same grid for
/// each forcing level.
pub fn perturbation_stability(
    p: &NcfProblem,
    u0: &[f64],
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    delta_fs: &[f64],
    seed: u64,
) -> std::result::Result<HarnessOutput<StabilityReport>, FlowError> {
    if delta_fs.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        return Err(Error::domain("forcing levels must be finite and non-negative").into());
    }
    let w0 = WeightVector::new(p.model(), u0.to_vec())?;
    let base = ncf_flow(p, &w0, integ, policy)?;
    let t_end = base.end_time();

    // finite-difference Lipschitz estimate of the field along the run
    let mut r = rng::stream(seed, 4);
    let eps = 1e-6;
    let mut lip = 0.0f64;
    for (_, u) in base.snapshots() {
        let g0 = p.grad(u, policy)?;
        for _ in 0..3 {
            let xi = rng::unit_vec(&mut r, u.len());
            let up: Vec<f64> = u.iter().zip(&xi).map(|(a, b)| a + eps * b).collect();
            lip = lip.max(linalg::dist(&p.grad(&up, policy)?, &g0) / eps);
        }
    }

    let mut levels = delta_fs.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    let runs: Vec<_> = levels
        .par_iter()
        .map(|&df| {
            let f = sinusoidal_forcing(df);
            ncf_flow_forced(p, &w0, integ, policy, &f)
        })
        .collect();
    let mut rows = Vec::with_capacity(levels.len());
    let mut trajs = vec![base.clone()];
    for (&delta_f, run) in levels.iter().zip(runs) {
        let mut t = run?;
        t.meta.label = format!("forced delta_f={delta_f:e}");
        let sup_dev = t
            .snapshots()
            .zip(base.snapshots())
            .map(|((_, a), (_, b))| linalg::dist(a, b))
            .fold(0.0, f64::max);
        rows.push(StabilityRow {
            delta_f,
            sup_dev,
            bound: 10.0 * delta_f * (lip * t_end).exp(),
        });
        trajs.push(t);
    }
    let monotone = rows
        .windows(2)
        .all(|w| w[1].sup_dev < w[0].sup_dev || (w[0].sup_dev == 0.0 && w[1].sup_dev == 0.0));
    let bound_ok = rows.iter().all(|r| r.sup_dev <= r.bound);
    Ok(HarnessOutput {
        report: StabilityReport {
            t_end,
            lipschitz_est: lip,
            rows,
            monotone,
            bound_ok,
        },
        runs: trajs,
    })
}
