//! Turns a validated config into a report, its trajectories and the list of
//! failed checks.

use serde::Serialize;
use serde_json::{json, Value};

use ncf_core::experiments::{
    build_saddle, data, escape_g, leaky_nonbranch_set, nonbranch_probe, perturbation_stability,
    saddle_harness, sep_alignment, thm1_harness, toy_u1u2, u1u2_problem,
};
use ncf_core::flow::{norm_growth_check, train_flow, Constants};
use ncf_core::ncf::{direction_verdict_with, kkt_residual_scan, ncf_flow, Outcome as Verdict};
use ncf_core::{linalg, rng, FlowError, NcfProblem, NetworkModel, Trajectory, WeightVector};

use crate::config::{Experiment, RunConfig};
use crate::CliError;

/// What the angle plot shows: the 2-parameter (or larger) blocks of one run
/// and, when available, the correlation function of a single block.
pub struct AngleView {
    pub run: usize,
    /// `(block index, offset, length)` in the parameter vector of the run.
    pub blocks: Vec<(usize, usize, usize)>,
    pub curve: Option<NcfProblem>,
}

pub struct Outcome {
    pub report: Value,
    pub runs: Vec<Trajectory>,
    pub failures: Vec<String>,
    pub summary: Vec<(String, f64)>,
    pub angles: AngleView,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

/// Records a failed check.
fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

/// A flow failure keeps its partial trajectory and becomes a failed run.
fn flow_failure(e: FlowError) -> Result<Outcome, CliError> {
    match e {
        FlowError::Model(e) => Err(e.into()),
        other => {
            let msg = other.to_string();
            let runs = other.partial().cloned().into_iter().collect();
            Ok(Outcome {
                report: json!({ "error": msg }),
                runs,
                failures: vec![msg],
                summary: Vec::new(),
                angles: AngleView {
                    run: 0,
                    blocks: Vec::new(),
                    curve: None,
                },
            })
        }
    }
}

fn layout(model: &NetworkModel, which: impl IntoIterator<Item = usize>) -> Vec<(usize, usize, usize)> {
    let blocks = model.blocks();
    which
        .into_iter()
        .filter_map(|i| blocks.get(i).map(|b| (i, b.offset, b.len)))
        .collect()
}

fn unit_gaussian(k: usize, seed: u64) -> Vec<f64> {
    rng::unit_vec(&mut rng::stream(seed, 11), k)
}

fn two_param_block(p: &NcfProblem) -> Option<NcfProblem> {
    p.block_problem(0).ok().filter(|b| b.model().param_dim() == 2)
}

pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    match &cfg.experiment {
        Experiment::Train {
            integrator,
            init_std,
            sep,
            checks,
            beta_samples,
        } => {
            let model = cfg.build_model()?;
            let data = cfg.build_data()?;
            let loss = cfg.loss()?;
            let g = data::gaussian_init(&model, *init_std, cfg.seed);
            let delta = linalg::norm(&g);
            let w0 = WeightVector::new(&model, linalg::scaled(&g, 1.0 / delta))?;
            let traj = match train_flow(&model, &data, loss, &w0, delta, integrator, &cfg.policy) {
                Ok(t) => t,
                Err(e) => return flow_failure(e),
            };
            let constants = Constants::for_problem(&model, &data, &loss, *beta_samples, cfg.seed)?;
            let excess = norm_growth_check(&traj, &constants, delta);
            let problem = NcfProblem::from_loss(model, data, &loss)?;
            let w_final = traj.final_state().expect("final snapshot");
            let align = sep_alignment(&problem, &g, w_final, sep)?;
            let l0 = traj.first().map_or(f64::NAN, |r| r.loss);
            let l1 = traj.last().map_or(f64::NAN, |r| r.loss);
            let rel = (l1 - l0).abs() / l0.abs();
            let max_norm = traj
                .records
                .iter()
                .flat_map(|r| r.block_norms.iter().copied())
                .fold(0.0, f64::max);
            let backstep_fraction = traj.stats.backsteps as f64 / traj.stats.steps.max(1) as f64;

            let mut failures = Vec::new();
            if let Some(m) = checks.max_rel_loss_change {
                check(&mut failures, rel < m, || {
                    format!("relative loss change {rel:e} is not below {m:e}")
                });
            }
            if let Some(m) = checks.max_neuron_norm {
                check(&mut failures, max_norm < m, || {
                    format!("max neuron norm {max_norm:e} is not below {m:e}")
                });
            }
            if let Some(m) = checks.min_aligned_fraction {
                check(&mut failures, align.aligned_fraction >= m, || {
                    format!(
                        "aligned fraction {} ({} aligned, {} undecided) is below {m}",
                        align.aligned_fraction, align.aligned, align.undecided
                    )
                });
            }
            check(&mut failures, excess <= checks.max_envelope_excess, || {
                format!("norm envelope exceeded by {excess:e}")
            });
            check(
                &mut failures,
                backstep_fraction <= checks.max_backstep_fraction,
                || format!("loss rose on {} of {} steps", traj.stats.backsteps, traj.stats.steps),
            );
            let summary = vec![
                ("rel_loss_change".into(), rel),
                ("max_neuron_norm".into(), max_norm),
                ("aligned_fraction".into(), align.aligned_fraction),
                ("envelope_excess".into(), excess),
                ("backstep_fraction".into(), backstep_fraction),
            ];
            let report = json!({
                "delta": delta,
                "constants": constants,
                "loss_initial": l0,
                "loss_final": l1,
                "rel_loss_change": rel,
                "max_neuron_norm": max_norm,
                "envelope_excess": excess,
                "backstep_fraction": backstep_fraction,
                "alignment": align,
            });
            Ok(Outcome {
                report,
                angles: AngleView {
                    run: 0,
                    blocks: layout(problem.model(), 0..problem.model().blocks().len()),
                    curve: two_param_block(&problem),
                },
                runs: vec![traj],
                failures,
                summary,
            })
        }

        Experiment::Ncf {
            integrator,
            u0,
            sep,
            verdict,
            tol_kkt,
            min_aligned_fraction,
            forcing,
        } => {
            let model = cfg.build_model()?;
            let p = NcfProblem::from_loss(model, cfg.build_data()?, &cfg.loss()?)?;
            let u0 = u0
                .clone()
                .unwrap_or_else(|| unit_gaussian(p.model().param_dim(), cfg.seed));
            let w0 = WeightVector::new(p.model(), u0.clone())?;
            let traj = match ncf_flow(&p, &w0, integrator, &cfg.policy) {
                Ok(t) => t,
                Err(e) => return flow_failure(e),
            };
            let v = direction_verdict_with(&traj, verdict)?;
            let limit = match (&v.outcome, &v.limit_direction) {
                (Verdict::DirectionalLimit, Some(u)) => Some(kkt_residual_scan(&p, u, &cfg.policy)?),
                _ => None,
            };
            let align = sep_alignment(&p, &u0, traj.final_state().expect("final snapshot"), sep)?;
            let mut failures = Vec::new();
            check(&mut failures, traj.stats.backsteps == 0, || {
                format!(
                    "N decreased on {} steps (largest relative drop {:e})",
                    traj.stats.backsteps, traj.stats.max_backstep
                )
            });
            check(&mut failures, traj.stats.rayleigh_backsteps == 0, || {
                format!(
                    "N/|u|^2 decreased on {} steps (largest relative drop {:e})",
                    traj.stats.rayleigh_backsteps, traj.stats.max_rayleigh_backstep
                )
            });
            if let Some(r) = &limit {
                check(&mut failures, r.residual <= *tol_kkt && r.nonneg, || {
                    format!("limit direction has KKT residual {:e}, objective {}", r.residual, r.objective)
                });
            }
            if let Some(m) = min_aligned_fraction {
                check(&mut failures, align.aligned_fraction >= *m, || {
                    format!("aligned fraction {} is below {m}", align.aligned_fraction)
                });
            }
            let mut runs = vec![traj];
            let mut summary = vec![
                ("final_norm".into(), runs[0].last().map_or(f64::NAN, |r| r.norm_w)),
                ("aligned_fraction".into(), align.aligned_fraction),
                ("limit_residual".into(), limit.as_ref().map_or(f64::NAN, |r| r.residual)),
            ];
            let stability = if forcing.is_empty() {
                None
            } else {
                let out = match perturbation_stability(&p, &u0, integrator, &cfg.policy, forcing, cfg.seed) {
                    Ok(o) => o,
                    Err(e) => return flow_failure(e),
                };
                let r = out.report;
                check(&mut failures, r.bound_ok, || "forced deviation exceeds its bound".into());
                check(&mut failures, r.monotone, || {
                    "forced deviation does not shrink with the forcing".into()
                });
                if let [row] = r.rows.as_slice() {
                    summary.push(("sup_dev".into(), row.sup_dev));
                } else {
                    let worst = r.rows.iter().map(|x| x.sup_dev).fold(0.0, f64::max);
                    summary.push(("max_sup_dev".into(), worst));
                }
                runs.extend(out.runs.into_iter().skip(1));
                Some(r)
            };
            let report = json!({
                "u0": u0,
                "verdict": v,
                "limit_kkt": limit,
                "alignment": align,
                "stability": stability,
            });
            Ok(Outcome {
                report,
                angles: AngleView {
                    run: 0,
                    blocks: layout(p.model(), 0..p.model().blocks().len()),
                    curve: two_param_block(&p),
                },
                runs,
                failures,
                summary,
            })
        }

        Experiment::Thm1 { harness, max_sup_dev } => {
            let model = cfg.build_model()?;
            let data = cfg.build_data()?;
            let loss = cfg.loss()?;
            let w0 = WeightVector::new(&model, unit_gaussian(model.param_dim(), cfg.seed))?;
            let out = match thm1_harness(&model, &data, loss, &w0, harness) {
                Ok(o) => o,
                Err(e) => return flow_failure(e),
            };
            let r = &out.report;
            let mut failures = Vec::new();
            check(&mut failures, r.passed(), || {
                format!(
                    "harness failed: trend_ok = {}, limit_kkt_ok = {:?}",
                    r.trend_ok, r.limit_kkt_ok
                )
            });
            // rows run from the largest delta down
            let strict = r.rows.windows(2).all(|w| w[1].sup_dev < w[0].sup_dev);
            check(&mut failures, r.inconclusive || strict, || {
                "sup deviation is not strictly decreasing in delta".into()
            });
            let last = r.rows.last();
            if let (Some(m), Some(row)) = (max_sup_dev, last) {
                check(&mut failures, r.inconclusive || row.sup_dev < *m, || {
                    format!("sup deviation {:e} at delta {:e} is not below {m}", row.sup_dev, row.delta)
                });
            }
            for row in &r.rows {
                check(&mut failures, row.envelope_excess <= 1e-10, || {
                    format!("norm envelope exceeded by {:e} at delta {:e}", row.envelope_excess, row.delta)
                });
            }
            let summary = vec![
                ("sup_dev".into(), last.map_or(f64::NAN, |x| x.sup_dev)),
                ("t_bar".into(), r.t_bar),
                ("eta_est".into(), r.eta_est),
                (
                    "envelope_excess".into(),
                    r.rows.iter().map(|x| x.envelope_excess).fold(f64::NEG_INFINITY, f64::max),
                ),
            ];
            let p = NcfProblem::from_loss(model, data, &loss)?;
            Ok(Outcome {
                report: to_value(&out.report),
                angles: AngleView {
                    run: if out.runs.len() > 1 { 1 } else { 0 },
                    blocks: layout(p.model(), 0..p.model().blocks().len()),
                    curve: two_param_block(&p),
                },
                runs: out.runs,
                failures,
                summary,
            })
        }

        Experiment::Saddle {
            harness,
            nonzero_blocks,
            w_bar_n,
            tol_stationary,
            max_dist_to_saddle,
            min_aligned_fraction,
        } => {
            let model = cfg.build_model()?;
            let data = cfg.build_data()?;
            let loss = cfg.loss()?;
            let spec = build_saddle(&model, &data, loss, nonzero_blocks, w_bar_n.clone(), *tol_stationary)?;
            let zn = rng::unit_vec(&mut rng::stream(cfg.seed, 0), spec.partition.nonzero.len());
            let zz = rng::unit_vec(&mut rng::stream(cfg.seed, 1), spec.partition.zero.len());
            let out = match saddle_harness(&spec, &model, &data, loss, &zn, &zz, harness) {
                Ok(o) => o,
                Err(e) => return flow_failure(e),
            };
            let r = &out.report;
            let mut failures = Vec::new();
            check(&mut failures, r.confinement_ok, || "Z(t) left C·Z(0) before T2".into());
            check(&mut failures, r.trend_ok, || "sup deviation grows as delta shrinks".into());
            check(&mut failures, r.limit_kkt_ok != Some(false), || {
                "limit direction of the zero blocks is not a non-negative KKT point".into()
            });
            let max_dist = r.rows.iter().map(|x| x.max_dist_to_saddle).fold(0.0, f64::max);
            let min_frac = r
                .rows
                .iter()
                .map(|x| x.blocks.aligned_fraction)
                .fold(f64::INFINITY, f64::min);
            if let Some(m) = max_dist_to_saddle {
                check(&mut failures, max_dist < *m, || {
                    format!("distance to the saddle reached {max_dist:e}, limit {m:e}")
                });
            }
            if let Some(m) = min_aligned_fraction {
                for row in &r.rows {
                    let b = &row.blocks;
                    check(&mut failures, b.aligned_fraction >= *m, || {
                        format!(
                            "delta {:e}: aligned fraction {} ({} aligned, {} undecided, {} vanished) is below {m}",
                            row.delta, b.aligned_fraction, b.aligned, b.undecided, b.vanished
                        )
                    });
                }
            }
            let summary = vec![
                ("max_dist_to_saddle".into(), max_dist),
                ("aligned_fraction".into(), min_frac),
                ("sup_dev".into(), r.rows.last().map_or(f64::NAN, |x| x.sup_dev)),
                ("m2".into(), r.m2),
                ("t_bar2".into(), r.t_bar2),
                (
                    "loss_rel_change".into(),
                    r.rows.iter().map(|x| x.loss_rel_change.abs()).fold(0.0, f64::max),
                ),
            ];
            let pz = spec.z_problem(&model, &data)?;
            let report = json!({
                "saddle": {
                    "nonzero_blocks": spec.nonzero_blocks,
                    "zero_blocks": spec.zero_blocks,
                    "w_bar_n": spec.w_bar_n,
                    "y_bar": spec.y_bar,
                },
                "harness": out.report,
            });
            Ok(Outcome {
                report,
                angles: AngleView {
                    run: if out.runs.len() > 1 { 1 } else { 0 },
                    blocks: layout(&model, spec.zero_blocks.iter().copied()),
                    curve: two_param_block(&pz),
                },
                runs: out.runs,
                failures,
                summary,
            })
        }

        Experiment::ToyU1u2 {
            integrator,
            cases,
            tol_conservation,
            tol_closed_form,
        } => {
            let mut failures = Vec::new();
            let mut reports = Vec::new();
            let mut runs = Vec::new();
            let mut worst_drift = 0.0f64;
            for (i, c) in cases.iter().enumerate() {
                let policy = c.policy.unwrap_or(cfg.policy);
                let out = match toy_u1u2(&policy, c.u0, integrator) {
                    Ok(o) => o,
                    Err(e) => return flow_failure(e),
                };
                let r = out.report;
                worst_drift = worst_drift.max(r.conservation_drift);
                check(&mut failures, r.conservation_drift <= *tol_conservation, || {
                    format!("case {i}: u1^2 - u2^2 drifted by {:e}", r.conservation_drift)
                });
                if c.u0[1] == 0.0 && policy.slope_at_zero(-1.0) == 0.0 {
                    check(&mut failures, r.stationary, || {
                        format!("case {i}: start on the kink moved by {:e}", r.max_displacement)
                    });
                }
                if let Some(e) = r.closed_form_error {
                    check(&mut failures, e <= *tol_closed_form, || {
                        format!("case {i}: closed-form error {e:e}")
                    });
                }
                let mut t = out.runs.into_iter().next().expect("one run");
                t.meta.label = format!("u1|u2| case {i}");
                runs.push(t);
                reports.push(r);
            }
            Ok(Outcome {
                report: json!({ "cases": reports }),
                runs,
                failures,
                summary: vec![("max_conservation_drift".into(), worst_drift)],
                angles: AngleView {
                    run: 0,
                    blocks: vec![(0, 0, 2)],
                    curve: Some(u1u2_problem()),
                },
            })
        }

        Experiment::EscapeG { deltas, step } => {
            let mut failures = Vec::new();
            let mut reports = Vec::new();
            let mut runs = Vec::new();
            let bound = 0.09 - 10.0 * step;
            for &d in deltas {
                let out = match escape_g(d, *step, &cfg.policy) {
                    Ok(o) => o,
                    Err(e) => return flow_failure(e),
                };
                let r = out.report;
                if d > 0.0 {
                    check(&mut failures, r.distance >= bound, || {
                        format!("delta {d}: distance {} is below {bound}", r.distance)
                    });
                }
                runs.extend(out.runs);
                reports.push(r);
            }
            let min_dist = reports
                .iter()
                .filter(|r| r.delta > 0.0)
                .map(|r| r.distance)
                .fold(f64::INFINITY, f64::min);
            Ok(Outcome {
                report: json!({ "bound": bound, "rows": reports }),
                runs,
                failures,
                summary: vec![("min_distance".into(), min_dist)],
                angles: AngleView {
                    run: 0,
                    blocks: vec![(0, 0, 2)],
                    curve: None,
                },
            })
        }

        Experiment::LeakyNonbranch {
            integrator,
            v_star,
            u_star,
            gamma,
            inits,
            tol_conservation,
            probe,
        } => {
            let model = cfg.build_model()?;
            let p = NcfProblem::from_loss(model, cfg.build_data()?, &cfg.loss()?)?;
            let out = match leaky_nonbranch_set(
                &p, *v_star, u_star, *gamma, inits, integrator, &cfg.policy, *tol_conservation,
            ) {
                Ok(o) => o,
                Err(e) => return flow_failure(e),
            };
            let r = &out.report;
            let mut failures = Vec::new();
            for (i, init) in r.inits.iter().enumerate().filter(|(_, x)| x.in_s) {
                check(&mut failures, init.conservation_drift <= *tol_conservation, || {
                    format!("init {i}: v^2 - |u|^2 drifted by {:e}", init.conservation_drift)
                });
                check(&mut failures, init.sign_preserved, || {
                    format!("init {i}: activation sign flipped at t = {:?}", init.first_flip)
                });
            }
            for pair in &r.pairs {
                check(&mut failures, pair.max_ratio <= 1.0 + 1e-6, || {
                    format!("inits {} and {} separate faster than the Lipschitz bound", pair.a, pair.b)
                });
            }
            let mut runs = out.runs.clone();
            let probe_report = match probe {
                Some(ps) => {
                    let mut star = vec![*v_star];
                    star.extend_from_slice(u_star);
                    match nonbranch_probe(&p, &star, integrator, &cfg.policy, ps.n_perturb, ps.rho, cfg.seed) {
                        Ok(o) => {
                            runs.extend(o.runs.into_iter().take(1).map(|mut t| {
                                t.meta.label = "probe base".into();
                                t
                            }));
                            Some(o.report)
                        }
                        Err(e) => return flow_failure(e),
                    }
                }
                None => None,
            };
            let drift = r
                .inits
                .iter()
                .filter(|x| x.in_s)
                .map(|x| x.conservation_drift)
                .fold(0.0, f64::max);
            let summary = vec![
                ("max_conservation_drift".into(), drift),
                ("in_s".into(), r.inits.iter().filter(|x| x.in_s).count() as f64),
            ];
            Ok(Outcome {
                report: json!({ "set": out.report, "probe": probe_report }),
                angles: AngleView {
                    run: 0,
                    blocks: vec![(0, 0, 2)],
                    curve: None,
                },
                runs,
                failures,
                summary,
            })
        }

        Experiment::Kkt { .. } => Err(CliError::Config(
            "kkt configs are read by the kkt command".into(),
        )),
    }
}
