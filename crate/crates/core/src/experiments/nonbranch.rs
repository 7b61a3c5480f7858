//! Uniqueness probes: the Leaky-ReLU set `S` and perturbed-start divergence.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FlowError, Result};
use crate::experiments::HarnessOutput;
use crate::flow::{IntegratorConfig, StepView};
use crate::linalg;
use crate::models::{KinkPolicy, ModelKind, WeightVector};
use crate::ncf::{kkt_residual_scan, ncf_flow, ncf_flow_with_refs, KktReport, NcfProblem};
use crate::rng;
use crate::trajectory::Trajectory;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub init: Vec<f64>,
    /// `sign(v*)·v > ‖u‖` and `‖u − u*‖ ≤ γ`.
    pub in_s: bool,
    /// `max |v² − ‖u‖² − (v₀² − ‖u₀‖²)|` over every step.
    pub conservation_drift: f64,
    pub sign_preserved: bool,
    /// First time some `xᵢᵀu(t)` changed sign relative to `xᵢᵀu*`.
    pub first_flip: Option<f64>,
    /// A sign flip from inside `S`.
    pub hypothesis_violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub a: usize,
    pub b: usize,
    pub d0: f64,
    /// `max_t ‖w_a(t) − w_b(t)‖ / (d0·e^{Lt})`.
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakySetReport {
    pub star: KktReport,
    /// `min |xᵢᵀu*|`.
    pub eta1: f64,
    /// `max ‖xᵢ‖`.
    pub eta2: f64,
    pub gamma: f64,
    /// `‖q‖` with `q = Σᵢ zᵢσ′(xᵢᵀu*)xᵢ`; the flow is linear with this norm on `S`.
    pub lipschitz: f64,
    pub inits: Vec<InitOutcome>,
    pub pairs: Vec<PairOutcome>,
    pub tol_conservation: f64,
}

impl LeakySetReport {
    /// Every in-`S` start conserves balance, keeps its signs, and every pair
    /// of in-`S` starts stays within its Lipschitz envelope.
    pub fn passed(&self) -> bool {
        self.inits
            .iter()
            .filter(|i| i.in_s)
            .all(|i| i.conservation_drift <= self.tol_conservation && i.sign_preserved)
            && self.pairs.iter().all(|p| p.max_ratio <= 1.0 + 1e-6)
    }
}

/// Runs the two-layer NCF flow of one Leaky-ReLU neuron from each start and
/// audits balance, activation pattern and continuous dependence.
#[allow(clippy::too_many_arguments)]
pub fn leaky_nonbranch_set(
    p: &NcfProblem,
    v_star: f64,
    u_star: &[f64],
    gamma: Option<f64>,
    inits: &[Vec<f64>],
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    tol_conservation: f64,
) -> std::result::Result<HarnessOutput<LeakySetReport>, FlowError> {
    let alpha = match p.model().kind() {
        ModelKind::TwoLayerLeakyRelu { alpha, hidden: 1 } => *alpha,
        _ => {
            return Err(Error::Inapplicable(
                "the set S is defined for a single two-layer neuron".into(),
            )
            .into())
        }
    };
    let d = p.model().input_dim();
    if u_star.len() != d {
        return Err(Error::dim("u* does not match the input dimension").into());
    }
    let mut star_w = vec![v_star];
    star_w.extend_from_slice(u_star);
    let star = kkt_residual_scan(p, &star_w, policy)?;
    let signs: Vec<f64> = p.data().inputs().map(|x| linalg::dot(x, u_star)).collect();
    let eta1 = signs.iter().fold(f64::INFINITY, |m, s| m.min(s.abs()));
    if !(eta1 > 0.0) {
        return Err(Error::Degenerate("some input is orthogonal to u*".into()).into());
    }
    let eta2 = p.data().inputs().map(linalg::norm).fold(0.0, f64::max);
    let gamma = gamma.unwrap_or(eta1 / (2.0 * eta2));
    let q: Vec<f64> = p.data().inputs().zip(p.z()).zip(&signs).fold(vec![0.0; d], |mut acc, ((x, z), s)| {
        let slope = if *s > 0.0 { 1.0 } else { alpha };
        linalg::axpy(z * slope, x, &mut acc);
        acc
    });
    let lipschitz = linalg::norm(&q);

    let runs: Vec<std::result::Result<(InitOutcome, Trajectory), FlowError>> = inits
        .par_iter()
        .map(|w0| {
            let wv = WeightVector::new(p.model(), w0.clone())?;
            let balance = |w: &[f64]| w[0] * w[0] - linalg::norm_sq(&w[1..]);
            let b0 = balance(w0);
            let in_s = v_star.signum() * w0[0] > linalg::norm(&w0[1..])
                && linalg::dist(&w0[1..], u_star) <= gamma;
            let mut drift = 0.0f64;
            let mut first_flip = None;
            let traj = ncf_flow_with_refs(p, &wv, integ, policy, None, &mut |v: &StepView| {
                drift = drift.max((balance(v.w) - b0).abs());
                if first_flip.is_none()
                    && p
                        .data()
                        .inputs()
                        .zip(&signs)
                        .any(|(x, s)| linalg::dot(x, &v.w[1..]) * s <= 0.0)
                {
                    first_flip = Some(v.t);
                }
            })?;
            Ok((
                InitOutcome {
                    init: w0.clone(),
                    in_s,
                    conservation_drift: drift,
                    sign_preserved: first_flip.is_none(),
                    first_flip,
                    hypothesis_violated: in_s && first_flip.is_some(),
                },
                traj,
            ))
        })
        .collect();
    let mut outcomes = Vec::with_capacity(runs.len());
    let mut trajs = Vec::with_capacity(runs.len());
    for r in runs {
        let (o, mut t) = r?;
        t.meta.label = format!("leaky init {}", outcomes.len());
        outcomes.push(o);
        trajs.push(t);
    }
    let mut pairs = Vec::new();
    for a in 0..trajs.len() {
        for b in a + 1..trajs.len() {
            if !(outcomes[a].in_s && outcomes[b].in_s) {
                continue;
            }
            let d0 = linalg::dist(&inits[a], &inits[b]);
            let max_ratio = trajs[a]
                .snapshots()
                .zip(trajs[b].snapshots())
                .map(|((r, wa), (_, wb))| linalg::dist(wa, wb) / (d0 * (lipschitz * r.t).exp()))
                .fold(0.0, f64::max);
            pairs.push(PairOutcome { a, b, d0, max_ratio });
        }
    }
    Ok(HarnessOutput {
        report: LeakySetReport {
            star,
            eta1,
            eta2,
            gamma,
            lipschitz,
            inits: outcomes,
            pairs,
            tol_conservation,
        },
        runs: trajs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonbranchReport {
    pub rho: f64,
    pub n_perturb: usize,
    pub times: Vec<f64>,
    /// Maximum pairwise distance between perturbed runs over `rho`.
    pub divergence: Vec<f64>,
    pub max_divergence: f64,
    /// Least-squares slope of `ln divergence` against `t`.
    pub fitted_lambda: Option<f64>,
    /// Fraction of recorded rows on which the unperturbed run sits on a kink.
    pub base_kink_fraction: f64,
    /// The unperturbed run rides a kink while nearby starts separate.
    pub branching_suspected: bool,
}

/// Starts `n_perturb` flows at `u0 + rho·ξₖ` with random unit `ξₖ` and
/// measures how fast they separate. Evidence only: smooth flows separate at
/// most exponentially; a kink-riding base run whose neighbours separate is
/// flagged.
pub fn nonbranch_probe(
    p: &NcfProblem,
    u0: &[f64],
    integ: &IntegratorConfig,
    policy: &KinkPolicy,
    n_perturb: usize,
    rho: f64,
    seed: u64,
) -> std::result::Result<HarnessOutput<NonbranchReport>, FlowError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::domain("rho must be positive").into());
    }
    let base = ncf_flow(p, &WeightVector::new(p.model(), u0.to_vec())?, integ, policy)?;
    let mut r = rng::stream(seed, 3);
    let starts: Vec<Vec<f64>> = (0..n_perturb)
        .map(|_| {
            let xi = rng::unit_vec(&mut r, u0.len());
            u0.iter().zip(&xi).map(|(a, b)| a + rho * b).collect()
        })
        .collect();
    let runs: Vec<std::result::Result<Trajectory, FlowError>> = starts
        .par_iter()
        .map(|s| ncf_flow(p, &WeightVector::new(p.model(), s.clone())?, integ, policy))
        .collect();
    let runs = runs.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    let snaps: Vec<Vec<(f64, &[f64])>> = runs
        .iter()
        .map(|t| t.snapshots().map(|(r, w)| (r.t, w)).collect())
        .collect();
    let times: Vec<f64> = base.snapshots().map(|(r, _)| r.t).collect();
    let divergence: Vec<f64> = (0..times.len())
        .map(|k| {
            let mut m = 0.0f64;
            for a in 0..snaps.len() {
                for b in a + 1..snaps.len() {
                    m = m.max(linalg::dist(snaps[a][k].1, snaps[b][k].1));
                }
            }
            m / rho
        })
        .collect();
    let max_divergence = divergence.iter().copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&divergence)
        .filter(|(_, d)| **d > 0.0)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let base_kink_fraction = if base.records.is_empty() {
        0.0
    } else {
        base.records.iter().filter(|r| r.kink_flag).count() as f64 / base.records.len() as f64
    };
    let d_start = divergence.first().copied().unwrap_or(0.0);
    Ok(HarnessOutput {
        report: NonbranchReport {
            rho,
            n_perturb,
            fitted_lambda: fit_slope(&pts),
            base_kink_fraction,
            branching_suspected: base_kink_fraction >= 0.5 && max_divergence > d_start * (1.0 + 1e-6) && d_start > 0.0,
            times,
            divergence,
            max_divergence,
        },
        runs,
    })
}

fn fit_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// The balanced unit candidate `(1/√2, q/(√2‖q‖))`.
pub fn balanced_star(q: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = linalg::norm(q);
    if !(n > 0.0) {
        return Err(Error::Degenerate("q = 0".into()));
    }
    Ok((0.5f64.sqrt(), linalg::scaled(q, 0.5f64.sqrt() / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::toys::u1u2_problem;
    use crate::flow::Horizon;
    use crate::models::{Dataset, NetworkModel};

    fn leaky_problem() -> NcfProblem {
        // two inputs along ±e₁ with odd labels
        let data = Dataset::new(2, vec![1.0, 0.0, -1.0, 0.0], vec![1.0, -1.0]).unwrap();
        NcfProblem::new(NetworkModel::two_layer(0.1, 1, 2), data, vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn leaky_set_checks_pass_inside_s() {
        let p = leaky_problem();
        let s = 0.5f64.sqrt();
        let inits = vec![
            vec![0.9, s, 0.01],
            vec![0.9, s + 0.005, 0.0],
            vec![0.9, s, -0.01],
            // outside S: v < ‖u‖
            vec![0.1, s, 0.5],
        ];
        let integ = IntegratorConfig::fixed(1e-6, Horizon::Steps(100_000)).with_thinning(1000, 1000);
        let out = leaky_nonbranch_set(&p, s, &[s, 0.0], None, &inits, &integ, &KinkPolicy::default(), 1e-7)
            .unwrap();
        let r = &out.report;
        assert!(r.star.residual < 1e-12);
        assert!((r.lipschitz - 1.1).abs() < 1e-12);
        assert!(r.inits[..3].iter().all(|i| i.in_s));
        assert!(!r.inits[3].in_s);
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.pairs.len(), 3);
    }

    #[test]
    fn smooth_flow_has_finite_exponent() {
        let data = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![2.0, 1.0]).unwrap();
        let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), data, vec![2.0, 1.0]).unwrap();
        let integ = IntegratorConfig::fixed(1e-3, Horizon::Steps(1000)).with_thinning(10, 10);
        let r = nonbranch_probe(&p, &[0.8, 0.6], &integ, &KinkPolicy::default(), 4, 1e-9, 0)
            .unwrap()
            .report;
        let lambda = r.fitted_lambda.unwrap();
        assert!(lambda.is_finite() && lambda < 10.0);
        assert!(!r.branching_suspected);
    }

    #[test]
    fn kink_riding_start_is_flagged() {
        let p = u1u2_problem();
        let integ = IntegratorConfig::fixed(1e-3, Horizon::Steps(2000)).with_thinning(10, 10);
        let r = nonbranch_probe(&p, &[1.0, 0.0], &integ, &KinkPolicy::with_value(0.0), 4, 1e-9, 0)
            .unwrap()
            .report;
        assert_eq!(r.base_kink_fraction, 1.0);
        assert!(r.branching_suspected, "{r:?}");
    }

    #[test]
    fn one_perturbation_has_no_divergence() {
        let p = u1u2_problem();
        let integ = IntegratorConfig::fixed(1e-3, Horizon::Steps(10));
        let r = nonbranch_probe(&p, &[1.0, 0.5], &integ, &KinkPolicy::default(), 1, 1e-9, 0)
            .unwrap()
            .report;
        assert_eq!(r.max_divergence, 0.0);
        assert_eq!(r.fitted_lambda, None);
    }
}
