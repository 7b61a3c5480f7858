//! Small-initialization sweep: training flow against the NCF flow.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError};
use crate::flow::{norm_growth_check, rescaled_train_flow, Constants, Horizon, IntegratorConfig, Loss};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel, WeightVector};
use crate::ncf::{
    direction_verdict_with, kkt_residual_scan, ncf_flow, DirectionalVerdict, KktReport, NcfProblem,
    Outcome, VerdictConfig, TOL_KKT,
};
use crate::experiments::HarnessOutput;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Aligned,
    Vanished,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thm1Config {
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Step and thinning for both flows up to `T̄`; the horizon is ignored.
    pub integ: IntegratorConfig,
    /// Long NCF run used for the directional verdict.
    pub ncf_integ: IntegratorConfig,
    #[serde(default)]
    pub verdict: VerdictConfig,
    #[serde(default)]
    pub policy: KinkPolicy,
    #[serde(default = "default_beta_samples")]
    pub beta_samples: usize,
    #[serde(default = "default_tol_kkt")]
    pub tol_kkt: f64,
}

pub(crate) fn default_epsilon() -> f64 {
    0.05
}

pub(crate) fn default_c() -> f64 {
    10.0
}

fn default_beta_samples() -> usize {
    20_000
}

fn default_tol_kkt() -> f64 {
    TOL_KKT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm1Row {
    pub delta: f64,
    pub c: f64,
    pub t_bar: f64,
    /// `sup ‖w(t)/δ − u(t)‖` over shared snapshots with `t ≤ T̄`.
    pub sup_dev: f64,
    pub final_norm_over_delta: f64,
    /// Cosine of `w(T̄)` with the NCF limit direction, when there is one.
    pub final_cos: Option<f64>,
    pub branch: Branch,
    /// `max (‖w(t)‖² − δ²e^{4ββ̃t})` over rows with `‖w‖ ≤ 1`.
    pub envelope_excess: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm1Report {
    pub constants: Constants,
    pub epsilon: f64,
    pub c: f64,
    pub t_bar: f64,
    /// `min_{t ≤ T̄} ‖u(t)‖ − ε`.
    pub eta_est: f64,
    pub verdict: DirectionalVerdict,
    /// KKT check of the limit direction.
    pub limit_kkt: Option<KktReport>,
    pub limit_kkt_ok: Option<bool>,
    /// Rows sorted by decreasing `δ`.
    pub rows: Vec<Thm1Row>,
    pub inconclusive: bool,
    pub reason: Option<String>,
    /// `sup_dev` nonincreasing as `δ` decreases.
    pub trend_ok: bool,
    /// Every row with `sup_dev < ε/2` is Aligned or Vanished.
    pub dichotomy_ok: bool,
}

impl Thm1Report {
    /// The deviation trend holds and the limit direction is a non-negative
    /// KKT point. The dichotomy is reported, not asserted: it needs `C`
    /// large enough for `u(T̄)` to have settled.
    pub fn passed(&self) -> bool {
        self.inconclusive || (self.trend_ok && self.limit_kkt_ok != Some(false))
    }
}

/// Runs the rescaled training flow `w/δ` for each `δ` up to
/// `T̄ = ln C/(4ββ̃)` and compares it with the NCF flow `u(t)` for
/// `z = −ℓ′(0, y)` started at the same unit `w0`.
pub fn thm1_harness(
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    w0: &WeightVector,
    cfg: &Thm1Config,
) -> std::result::Result<HarnessOutput<Thm1Report>, FlowError> {
    if cfg.deltas.is_empty() {
        return Err(Error::Config("delta sweep is empty".into()).into());
    }
    if cfg.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::domain("deltas must be positive").into());
    }
    if (linalg::norm(w0.values()) - 1.0).abs() > 1e-9 {
        return Err(Error::domain("w0 must be a unit vector").into());
    }
    let problem = NcfProblem::from_loss(model.clone(), data.clone(), &loss)?;
    let constants = Constants::for_problem(model, data, &loss, cfg.beta_samples, cfg.integ.seed)?;
    let t_bar = constants.t_bar(cfg.c)?;
    let integ = cfg.integ.with_horizon(Horizon::Time(t_bar));

    let empty = |verdict, reason: &str| Thm1Report {
        constants: constants.clone(),
        epsilon: cfg.epsilon,
        c: cfg.c,
        t_bar,
        eta_est: f64::NAN,
        verdict,
        limit_kkt: None,
        limit_kkt_ok: None,
        rows: Vec::new(),
        inconclusive: true,
        reason: Some(reason.to_string()),
        trend_ok: true,
        dichotomy_ok: true,
    };
    let undecided = DirectionalVerdict {
        outcome: Outcome::Undecided,
        limit_direction: None,
        eta_estimate: None,
        t_settle: None,
    };
    if problem.is_degenerate() {
        return Ok(HarnessOutput::bare(empty(undecided, "z = 0: the correlation function vanishes")));
    }

    let long = ncf_flow(&problem, w0, &cfg.ncf_integ, &cfg.policy)?;
    let verdict = direction_verdict_with(&long, &cfg.verdict)?;
    if verdict.outcome == Outcome::Undecided {
        return Ok(HarnessOutput {
            report: empty(verdict, "NCF flow has no directional verdict"),
            runs: vec![long],
        });
    }
    let u_hat = verdict.limit_direction.clone();
    let limit_kkt = match &u_hat {
        Some(u) => Some(kkt_residual_scan(&problem, u, &cfg.policy)?),
        None => None,
    };
    let limit_kkt_ok = limit_kkt.as_ref().map(|r| r.is_kkt(cfg.tol_kkt) && r.nonneg);

    let mut reference = ncf_flow(&problem, w0, &integ, &cfg.policy)?;
    reference.meta.label = "ncf".into();
    let eta_est = reference
        .records
        .iter()
        .filter(|r| r.t <= t_bar)
        .map(|r| r.norm_w)
        .fold(f64::INFINITY, f64::min)
        - cfg.epsilon;

    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let runs: Vec<std::result::Result<Trajectory, FlowError>> = deltas
        .par_iter()
        .map(|&d| rescaled_train_flow(model, data, loss, w0, d, &integ, &cfg.policy))
        .collect();
    let mut rows = Vec::with_capacity(deltas.len());
    let mut trajectories = vec![reference.clone()];
    for (&delta, run) in deltas.iter().zip(runs) {
        let mut traj = run?;
        traj.meta.label = format!("train delta={delta:e}");
        let sup_dev = traj
            .snapshots()
            .zip(reference.snapshots())
            .filter(|((r, _), _)| r.t <= t_bar)
            .map(|((_, v), (_, u))| linalg::dist(v, u))
            .fold(0.0, f64::max);
        let v_end = traj.final_state().expect("final snapshot is always kept");
        let norm = linalg::norm(v_end);
        let final_cos = u_hat.as_ref().map(|u| linalg::cosine(v_end, u));
        let branch = classify(norm, final_cos, eta_est, cfg.epsilon);
        rows.push(Thm1Row {
            delta,
            c: cfg.c,
            t_bar,
            sup_dev,
            final_norm_over_delta: norm,
            final_cos,
            branch,
            envelope_excess: norm_growth_check(&traj, &constants, delta),
            steps: traj.stats.steps,
        });
        trajectories.push(traj);
    }
    let trend_ok = rows.windows(2).all(|w| w[1].sup_dev <= w[0].sup_dev);
    let dichotomy_ok = rows
        .iter()
        .filter(|r| r.sup_dev < cfg.epsilon / 2.0)
        .all(|r| r.branch != Branch::Undecided);
    let report = Thm1Report {
        constants,
        epsilon: cfg.epsilon,
        c: cfg.c,
        t_bar,
        eta_est,
        verdict,
        limit_kkt,
        limit_kkt_ok,
        rows,
        inconclusive: false,
        reason: None,
        trend_ok,
        dichotomy_ok,
    };
    Ok(HarnessOutput {
        report,
        runs: trajectories,
    })
}

/// Aligned: `‖w‖/δ ≥ η` and `cos ≥ 1 − (1 + 3/(2η))ε`. Vanished: `‖w‖/δ ≤ 2ε`.
pub fn classify(norm_over_delta: f64, cos: Option<f64>, eta: f64, epsilon: f64) -> Branch {
    if let Some(c) = cos {
        if eta > 0.0 && norm_over_delta >= eta && c >= 1.0 - (1.0 + 1.5 / eta) * epsilon {
            return Branch::Aligned;
        }
    }
    if norm_over_delta <= 2.0 * epsilon {
        Branch::Vanished
    } else {
        Branch::Undecided
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::LossKind;

    fn cfg(deltas: Vec<f64>) -> Thm1Config {
        Thm1Config {
            deltas,
            epsilon: 0.05,
            c: 10.0,
            integ: IntegratorConfig::fixed(1e-3, Horizon::Steps(1)),
            ncf_integ: IntegratorConfig::fixed(1e-2, Horizon::Steps(3000)).with_thinning(10, 10),
            verdict: VerdictConfig::default(),
            policy: KinkPolicy::default(),
            beta_samples: 1000,
            tol_kkt: 1e-6,
        }
    }

    #[test]
    fn classify_branches() {
        assert_eq!(classify(1.0, Some(0.999), 0.5, 0.05), Branch::Aligned);
        assert_eq!(classify(1.0, Some(0.5), 0.5, 0.05), Branch::Undecided);
        assert_eq!(classify(0.05, None, 0.5, 0.05), Branch::Vanished);
    }

    #[test]
    fn zero_labels_are_inconclusive() {
        let model = NetworkModel::squared_relu(1, 2);
        let data = Dataset::new(2, vec![1.0, 0.0], vec![0.0]).unwrap();
        let w0 = WeightVector::new(&model, vec![1.0, 0.0]).unwrap();
        let r = &thm1_harness(&model, &data, Loss::sum(LossKind::Square), &w0, &cfg(vec![1e-2])).unwrap().report;
        assert!(r.inconclusive);
        assert!(r.rows.is_empty());
    }

    #[test]
    fn single_neuron_deviation_shrinks_with_delta() {
        // N(u) = 2·max(0, u₁)², the flow grows along e₁
        let model = NetworkModel::squared_relu(1, 2);
        let data = Dataset::new(2, vec![1.0, 0.0], vec![2.0]).unwrap();
        let t = 0.3f64;
        let w0 = WeightVector::new(&model, vec![t.cos(), t.sin()]).unwrap();
        let r = &thm1_harness(
            &model,
            &data,
            Loss::sum(LossKind::Square),
            &w0,
            &cfg(vec![1e-1, 1e-2, 1e-3]),
        )
        .unwrap()
        .report;
        assert!(!r.inconclusive);
        assert_eq!(r.verdict.outcome, Outcome::DirectionalLimit);
        assert_eq!(r.limit_kkt_ok, Some(true));
        assert!(r.trend_ok, "{:?}", r.rows);
        assert!(r.rows[2].sup_dev < 1e-4);
        assert!(r.rows.iter().all(|row| row.envelope_excess <= 1e-10));
    }
}
