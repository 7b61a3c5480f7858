//! Dynamics near a saddle `(w̄_n, 0)` of the training loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError, Result};
use crate::experiments::separable::{sep_alignment, SepConfig, SepReport};
use crate::experiments::thm1::{classify, default_c, default_epsilon, Branch};
use crate::experiments::{data, HarnessOutput};
use crate::flow::{
    train_flow_from, IntegratorConfig, Loss, LossKind, Reduction, StepView, TrainField,
    VectorField,
};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel, SaddlePartition, WeightVector};
use crate::ncf::{
    direction_verdict_with, kkt_residual_scan, ncf_flow, DirectionalVerdict, KktReport, NcfProblem,
    Outcome, VerdictConfig, TOL_KKT,
};
use crate::rng;
use crate::trajectory::{content_hash, Trajectory, TrajectoryMeta};

/// A stationary point with some blocks at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSpec {
    /// Blocks carrying the saddle's output.
    pub nonzero_blocks: Vec<usize>,
    /// Blocks that are zero at the saddle.
    pub zero_blocks: Vec<usize>,
    pub partition: SaddlePartition,
    pub w_bar_n: Vec<f64>,
    pub norm_n: f64,
    /// `‖∇_{w_n} L(w̄_n, 0)‖`, minimized over the kink slopes.
    pub stationarity_residual: f64,
    /// `y − H(X; w̄)`.
    pub y_bar: Vec<f64>,
    /// `−ℓ′(H(xᵢ; w̄), yᵢ)` times the loss reduction factor.
    pub z: Vec<f64>,
}

impl SaddleSpec {
    /// Full weight vector `(w̄_n, 0)`.
    pub fn w_bar(&self) -> Vec<f64> {
        self.partition
            .join(&self.w_bar_n, &vec![0.0; self.partition.zero.len()])
    }

    /// The NCF `u ↦ zᵀH_z(X; u)` of the zero blocks.
    pub fn z_problem(&self, model: &NetworkModel, data: &Dataset) -> Result<NcfProblem> {
        NcfProblem::new(model.sub_model(&self.zero_blocks)?, data.clone(), self.z.clone())
    }
}

/// Validates that `(w̄_n, 0)` is stationary in `w_n` to within `tol`.
pub fn build_saddle(
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    nonzero_blocks: &[usize],
    w_bar_n: Vec<f64>,
    tol: f64,
) -> Result<SaddleSpec> {
    model.check_data(data)?;
    let blocks = model.blocks();
    let mut is_n = vec![false; blocks.len()];
    for &b in nonzero_blocks {
        if b >= blocks.len() {
            return Err(Error::dim(format!("block {b} out of range")));
        }
        is_n[b] = true;
    }
    let zero_blocks: Vec<usize> = (0..blocks.len()).filter(|&b| !is_n[b]).collect();
    let indices = |which: &[usize]| -> Vec<usize> { which.iter().flat_map(|&b| blocks[b].range()).collect() };
    let partition = SaddlePartition {
        nonzero: indices(nonzero_blocks),
        zero: indices(&zero_blocks),
    };
    partition.validate(model.param_dim())?;
    if w_bar_n.len() != partition.nonzero.len() {
        return Err(Error::dim(format!(
            "{} saddle weights for {} nonzero parameters",
            w_bar_n.len(),
            partition.nonzero.len()
        )));
    }
    let w_bar = partition.join(&w_bar_n, &vec![0.0; partition.zero.len()]);

    let alpha = model.alpha();
    let mut policies = vec![KinkPolicy::default()];
    if model.has_kinks() {
        policies.extend(KinkPolicy::scan_family(alpha));
    }
    let mut residual = f64::INFINITY;
    let mut g = vec![0.0; w_bar.len()];
    for policy in policies {
        let mut field = TrainField::new(model, data, loss, policy, None)?;
        field.velocity(0.0, &w_bar, &mut g);
        residual = residual.min(linalg::norm(&partition.gather(&g, &partition.nonzero)));
    }
    if !(residual <= tol) {
        return Err(Error::Domain(format!(
            "not a saddle: stationarity residual {residual:e} exceeds {tol:e}"
        )));
    }
    let out = model.eval(data, &w_bar)?;
    let scale = loss.scale(data.len());
    let y = data.labels();
    Ok(SaddleSpec {
        nonzero_blocks: nonzero_blocks.to_vec(),
        zero_blocks,
        norm_n: linalg::norm(&w_bar_n),
        stationarity_residual: residual,
        y_bar: y.iter().zip(&out).map(|(t, p)| t - p).collect(),
        z: y.iter().zip(&out).map(|(&t, &p)| -scale * loss.kind.derivative(p, t)).collect(),
        partition,
        w_bar_n,
    })
}

/// The saddle of the 20-neuron example: neurons 0..10 at `[√½, 0]` fit the
/// `x₁ ≥ 0` half of the labels exactly, neurons 10..20 are zero.
pub fn build_saddle_fig1() -> Result<(NetworkModel, Dataset, Loss, SaddleSpec)> {
    let model = data::fig1_model();
    let ds = data::fig1_dataset()?;
    let loss = Loss {
        kind: LossKind::Square,
        reduction: Reduction::Mean,
    };
    let w_bar_n = [0.5f64.sqrt(), 0.0].repeat(10);
    let spec = build_saddle(&model, &ds, loss, &(0..10).collect::<Vec<_>>(), w_bar_n, 1e-8)?;
    Ok((model, ds, loss, spec))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleConfig {
    pub deltas: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Training run from the perturbed saddle; also used for the NCF reference.
    pub integ: IntegratorConfig,
    /// Long NCF run for the directional verdict of the zero blocks.
    pub ncf_integ: IntegratorConfig,
    #[serde(default)]
    pub verdict: VerdictConfig,
    #[serde(default)]
    pub policy: KinkPolicy,
    #[serde(default = "shrink_vanishes")]
    pub sep: SepConfig,
    #[serde(default = "default_tol_kkt")]
    pub tol_kkt: f64,
}

fn shrink_vanishes() -> SepConfig {
    SepConfig {
        shrink_is_vanish: true,
        ..SepConfig::default()
    }
}

fn default_tol_kkt() -> f64 {
    TOL_KKT
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleRow {
    pub delta: f64,
    /// `max Z(t)/Z(0)` over `t ≤ T̄₂`, `Z = ‖w_n − w̄_n‖² + ‖w_z‖²`.
    pub max_z_ratio: f64,
    /// First time `Z(t) > C·Z(0)` with `t ≤ T̄₂`.
    pub first_violation: Option<f64>,
    /// `max √Z(t)` over the whole run.
    pub max_dist_to_saddle: f64,
    /// `(L(end) − L(0))/L(0)`.
    pub loss_rel_change: f64,
    /// `sup ‖w_z(t)/δ − u(t)‖` over shared snapshots with `t ≤ T̄₂`.
    pub sup_dev: f64,
    pub final_norm_over_delta: f64,
    pub final_cos: Option<f64>,
    pub branch: Branch,
    /// Zero blocks at the end of the run against their own KKT sets.
    pub blocks: SepReport,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub stationarity_residual: f64,
    pub norm_n: f64,
    pub y_bar_norm: f64,
    /// Rate bounding `Z(t)/Z(0) ≤ e^{M₂t}` on the pilot run.
    pub m2: f64,
    pub c: f64,
    /// `min(ln C/M₂, end of run)`.
    pub t_bar2: f64,
    pub epsilon: f64,
    pub eta_est: f64,
    pub verdict: DirectionalVerdict,
    pub limit_kkt: Option<KktReport>,
    pub limit_kkt_ok: Option<bool>,
    pub rows: Vec<SaddleRow>,
    /// No row leaves `Z ≤ C·Z(0)` before `T̄₂`.
    pub confinement_ok: bool,
    /// `sup_dev` nonincreasing as `δ` decreases.
    pub trend_ok: bool,
}

impl SaddleReport {
    pub fn passed(&self) -> bool {
        self.confinement_ok && self.trend_ok && self.limit_kkt_ok != Some(false)
    }
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    if (linalg::norm(v) - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("{what} must be a unit vector")));
    }
    Ok(())
}

struct RunOut {
    traj: Trajectory,
    z_series: Vec<(f64, f64)>,
    w_at_t_bar: Vec<f64>,
}

/// Training flow from `w_n = w̄_n + δζ_n`, `w_z = δζ_z`, tracking `Z(t)`.
#[allow(clippy::too_many_arguments)]
fn perturbed_run(
    spec: &SaddleSpec,
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    zeta: (&[f64], &[f64]),
    delta: f64,
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    t_bar: f64,
) -> std::result::Result<RunOut, FlowError> {
    let wn: Vec<f64> = spec.w_bar_n.iter().zip(zeta.0).map(|(a, b)| a + delta * b).collect();
    let w0 = spec.partition.join(&wn, &linalg::scaled(zeta.1, delta));
    let w_bar = spec.w_bar();
    let mut meta = TrajectoryMeta::for_model(&format!("saddle delta={delta:e}"), model, "w");
    meta.delta = Some(delta);
    meta.seed = integ.seed;
    meta.config_hash = content_hash(&(loss, integ, policy, delta, &spec.w_bar_n));
    let mut z_series = Vec::new();
    let mut w_at_t_bar = w0.clone();
    let traj = train_flow_from(model, data, loss, &w0, integ, policy, meta, &mut |v: &StepView| {
        z_series.push((v.t, linalg::dist(v.w, &w_bar).powi(2)));
        if v.t <= t_bar {
            w_at_t_bar.clear();
            w_at_t_bar.extend_from_slice(v.w);
        }
    })?;
    Ok(RunOut {
        traj,
        z_series,
        w_at_t_bar,
    })
}

/// Perturbs the saddle by `δ·(ζ_n, ζ_z)` for each `δ`, checks that the flow
/// stays within `√(C·Z(0))` up to `T̄₂`, and compares the zero blocks with the
/// NCF flow of `N_{ȳ,H_z}` started at `ζ_z`. `M₂` is calibrated on a pilot
/// run at the largest `δ` and frozen for the sweep.
pub fn saddle_harness(
    spec: &SaddleSpec,
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    zeta_n: &[f64],
    zeta_z: &[f64],
    cfg: &SaddleConfig,
) -> std::result::Result<HarnessOutput<SaddleReport>, FlowError> {
    if loss.kind != LossKind::Square {
        return Err(Error::Inapplicable("saddle analysis needs the square loss".into()).into());
    }
    if cfg.deltas.is_empty() {
        return Err(Error::Config("delta sweep is empty".into()).into());
    }
    if cfg.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::domain("deltas must be positive").into());
    }
    if !(cfg.c > 1.0) {
        return Err(Error::domain("C must exceed 1").into());
    }
    if zeta_n.len() != spec.partition.nonzero.len() || zeta_z.len() != spec.partition.zero.len() {
        return Err(Error::dim("perturbation does not match the saddle partition").into());
    }
    check_unit(zeta_n, "zeta_n")?;
    check_unit(zeta_z, "zeta_z")?;
    cfg.integ.validate()?;

    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let pilot_integ = cfg.integ.clone().with_thinning(usize::MAX, usize::MAX);
    let pilot = perturbed_run(
        spec, model, data, loss, (zeta_n, zeta_z), deltas[0], &pilot_integ, &cfg.policy, 0.0,
    )?;
    let z0 = pilot.z_series[0].1;
    let m2 = pilot
        .z_series
        .iter()
        .filter(|(t, _)| *t > 0.0)
        .map(|(t, z)| (z / z0).ln() / t)
        .fold(f64::NEG_INFINITY, f64::max);
    let end = pilot.traj.end_time();
    let t_bar2 = if m2 > 0.0 { (cfg.c.ln() / m2).min(end) } else { end };

    let pz = spec.z_problem(model, data)?;
    let u0 = WeightVector::new(pz.model(), zeta_z.to_vec())?;
    let long = ncf_flow(&pz, &u0, &cfg.ncf_integ, &cfg.policy)?;
    let verdict = direction_verdict_with(&long, &cfg.verdict)?;
    let u_hat = match verdict.outcome {
        Outcome::DirectionalLimit => verdict.limit_direction.clone(),
        _ => None,
    };
    let limit_kkt = match &u_hat {
        Some(u) => Some(kkt_residual_scan(&pz, u, &cfg.policy)?),
        None => None,
    };
    let limit_kkt_ok = limit_kkt.as_ref().map(|r| r.is_kkt(cfg.tol_kkt) && r.nonneg);
    let mut reference = ncf_flow(&pz, &u0, &cfg.integ, &cfg.policy)?;
    reference.meta.label = "ncf zero blocks".into();
    let eta_est = reference
        .records
        .iter()
        .filter(|r| r.t <= t_bar2)
        .map(|r| r.norm_w)
        .fold(f64::INFINITY, f64::min)
        - cfg.epsilon;

    let runs: Vec<_> = deltas
        .par_iter()
        .map(|&d| {
            perturbed_run(
                spec, model, data, loss, (zeta_n, zeta_z), d, &cfg.integ, &cfg.policy, t_bar2,
            )
        })
        .collect();
    let mut rows = Vec::with_capacity(deltas.len());
    let mut trajectories = vec![reference.clone()];
    for (&delta, run) in deltas.iter().zip(runs) {
        let run = run?;
        let z_start = run.z_series[0].1;
        let within = run.z_series.iter().filter(|(t, _)| *t <= t_bar2);
        let max_z_ratio = within.clone().map(|(_, z)| z / z_start).fold(0.0, f64::max);
        let first_violation = within
            .clone()
            .find(|(_, z)| *z > cfg.c * z_start)
            .map(|(t, _)| *t);
        let max_dist_to_saddle = run.z_series.iter().map(|(_, z)| *z).fold(0.0, f64::max).sqrt();
        let sup_dev = run
            .traj
            .snapshots()
            .zip(reference.snapshots())
            .filter(|((r, _), _)| r.t <= t_bar2)
            .map(|((_, w), (_, u))| {
                let wz = spec.partition.gather(w, &spec.partition.zero);
                linalg::dist(&linalg::scaled(&wz, 1.0 / delta), u)
            })
            .fold(0.0, f64::max);
        let wz_bar = spec.partition.gather(&run.w_at_t_bar, &spec.partition.zero);
        let norm = linalg::norm(&wz_bar) / delta;
        let final_cos = u_hat.as_ref().map(|u| linalg::cosine(&wz_bar, u));
        let (l0, l1) = (
            run.traj.first().map_or(f64::NAN, |r| r.loss),
            run.traj.last().map_or(f64::NAN, |r| r.loss),
        );
        let w_first = run.traj.initial_state().expect("initial snapshot is always kept");
        let w_last = run.traj.final_state().expect("final snapshot is always kept");
        let blocks = sep_alignment(
            &pz,
            &spec.partition.gather(w_first, &spec.partition.zero),
            &spec.partition.gather(w_last, &spec.partition.zero),
            &cfg.sep,
        )?;
        rows.push(SaddleRow {
            delta,
            max_z_ratio,
            first_violation,
            max_dist_to_saddle,
            loss_rel_change: (l1 - l0) / l0,
            sup_dev,
            final_norm_over_delta: norm,
            final_cos,
            branch: classify(norm, final_cos, eta_est, cfg.epsilon),
            blocks,
            steps: run.traj.stats.steps,
        });
        trajectories.push(run.traj);
    }
    let report = SaddleReport {
        stationarity_residual: spec.stationarity_residual,
        norm_n: spec.norm_n,
        y_bar_norm: linalg::norm(&spec.y_bar),
        m2,
        c: cfg.c,
        t_bar2,
        epsilon: cfg.epsilon,
        eta_est,
        verdict,
        limit_kkt,
        limit_kkt_ok,
        confinement_ok: rows.iter().all(|r| r.first_violation.is_none()),
        trend_ok: rows.windows(2).all(|w| w[1].sup_dev <= w[0].sup_dev),
        rows,
    };
    Ok(HarnessOutput {
        report,
        runs: trajectories,
    })
}

/// `⟨c − p, s⟩/‖c − p‖²` with `s = −∇f(p)`.
pub fn assumption_ratio(grad: &dyn Fn(&[f64]) -> Vec<f64>, center: &[f64], p: &[f64]) -> f64 {
    let d = linalg::sub(center, p);
    let s = linalg::scaled(&grad(p), -1.0);
    linalg::dot(&d, &s) / linalg::norm_sq(&d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub gamma: f64,
    pub samples: usize,
    /// Minimum of [`assumption_ratio`] over the samples.
    pub min_ratio: f64,
    /// `max(0, −min_ratio)`.
    pub kappa_hat: f64,
    /// `max ‖s(w_n) − s(w̄_n)‖/‖w_n − w̄_n‖` over the samples.
    pub lipschitz_est: f64,
}

/// Samples `w_n` uniformly in the ball of radius `gamma` around `w̄_n`
/// (never at the center) and evaluates the one-sided condition on
/// `s ∈ −∂_{w_n}L(w_n, 0)`.
pub fn tech_assumption_probe(
    spec: &SaddleSpec,
    model: &NetworkModel,
    data: &Dataset,
    loss: Loss,
    n_dirs: usize,
    gamma: f64,
    seed: u64,
) -> Result<ProbeReport> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::domain("gamma must be positive"));
    }
    let part = &spec.partition;
    let grad_n = |wn: &[f64]| -> Vec<f64> {
        let w = part.join(wn, &vec![0.0; part.zero.len()]);
        let mut field = TrainField::new(model, data, loss, KinkPolicy::default(), None)
            .expect("validated by build_saddle");
        let mut v = vec![0.0; w.len()];
        field.velocity(0.0, &w, &mut v);
        // velocity is −∇L
        part.gather(&v, &part.nonzero).iter().map(|x| -x).collect()
    };
    let s_bar = linalg::scaled(&grad_n(&spec.w_bar_n), -1.0);
    let k = spec.w_bar_n.len();
    let mut r = rng::stream(seed, 5);
    let mut min_ratio = f64::INFINITY;
    let mut lip = 0.0f64;
    for _ in 0..n_dirs {
        let dir = rng::unit_vec(&mut r, k);
        let radius = loop {
            let u: f64 = rand::Rng::random(&mut r);
            if u > 0.0 {
                break gamma * u.powf(1.0 / k as f64);
            }
        };
        let p: Vec<f64> = spec.w_bar_n.iter().zip(&dir).map(|(c, d)| c + radius * d).collect();
        min_ratio = min_ratio.min(assumption_ratio(&grad_n, &spec.w_bar_n, &p));
        let s = linalg::scaled(&grad_n(&p), -1.0);
        lip = lip.max(linalg::dist(&s, &s_bar) / radius);
    }
    Ok(ProbeReport {
        gamma,
        samples: n_dirs,
        min_ratio,
        kappa_hat: (-min_ratio).max(0.0),
        lipschitz_est: lip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Horizon;
    use crate::ncf::theta_grid_kkt;

    #[test]
    fn fig1_saddle_is_stationary() {
        let (model, ds, _, spec) = build_saddle_fig1().unwrap();
        assert!(spec.stationarity_residual <= 1e-8);
        assert!((spec.norm_n - 5f64.sqrt()).abs() < 1e-12);
        let out = model.eval(&ds, &spec.w_bar()).unwrap();
        for (x, (&y, &h)) in ds.inputs().zip(ds.labels().iter().zip(&out)) {
            if x[0] >= 0.0 {
                assert!((h - 5.0 * x[0] * x[0]).abs() < 1e-12);
                assert!((y - h).abs() < 1e-12);
            } else {
                assert_eq!(h, 0.0);
                assert!((y - 4.0 * x[0] * x[0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_stationary_points() {
        let model = data::fig1_model();
        let ds = data::fig1_dataset().unwrap();
        let r = build_saddle(&model, &ds, Loss::sum(LossKind::Square), &[0], vec![1.0, 0.0], 1e-8);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn exact_saddle_is_a_fixed_point() {
        let (model, ds, loss, spec) = build_saddle_fig1().unwrap();
        let integ = IntegratorConfig::fixed(5e-5, Horizon::Steps(200));
        let meta = TrajectoryMeta::for_model("exact", &model, "w");
        let w = spec.w_bar();
        let t = train_flow_from(&model, &ds, loss, &w, &integ, &KinkPolicy::with_value(0.0), meta, &mut |_| {})
            .unwrap();
        assert!(linalg::dist(t.final_state().unwrap(), &w) < 1e-14);
    }

    #[test]
    fn smooth_saddle_probe_is_bounded_by_lipschitz() {
        let (model, ds, loss, spec) = build_saddle_fig1().unwrap();
        let p = tech_assumption_probe(&spec, &model, &ds, loss, 200, 1e-3, 1).unwrap();
        assert!(p.min_ratio.is_finite());
        assert!(p.kappa_hat <= p.lipschitz_est * (1.0 + 1e-6) + 1e-9);
    }

    #[test]
    fn small_sweep_stays_confined() {
        let (model, ds, loss, spec) = build_saddle_fig1().unwrap();
        let zn = rng::unit_vec(&mut rng::stream(2, 0), 20);
        let zz = rng::unit_vec(&mut rng::stream(2, 1), 20);
        let cfg = SaddleConfig {
            deltas: vec![1e-3, 1e-4],
            epsilon: 0.05,
            c: 10.0,
            integ: IntegratorConfig::fixed(1e-3, Horizon::Time(1.0)).with_thinning(10, 10),
            ncf_integ: IntegratorConfig::fixed(1e-2, Horizon::Steps(2000)).with_thinning(10, 10),
            verdict: VerdictConfig::default(),
            policy: KinkPolicy::default(),
            sep: shrink_vanishes(),
            tol_kkt: TOL_KKT,
        };
        let out = saddle_harness(&spec, &model, &ds, loss, &zn, &zz, &cfg).unwrap();
        let r = &out.report;
        assert!(r.confinement_ok, "{r:?}");
        assert!(r.trend_ok);
        assert!(r.rows.iter().all(|row| row.max_dist_to_saddle < 1e-2));
        assert_eq!(out.runs.len(), 3);
        // the residual correlation peaks at θ = π
        let g = theta_grid_kkt(&spec.z_problem(&model, &ds).unwrap().block_problem(0).unwrap(), 4000)
            .unwrap();
        assert!(g.maxima().any(|p| linalg::circular_distance(p.theta, std::f64::consts::PI) < 1e-6));
    }
}
