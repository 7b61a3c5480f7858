//! The `kkt` command: residuals of candidate directions and the KKT angles of
//! 2-parameter problems.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use ncf_core::ncf::{
    analytic_kkt_sym_relu, analytic_kkt_sym_sqrelu, kkt_residual, kkt_residual_scan, theta_grid_kkt,
    ThetaKktKind,
};
use ncf_core::{linalg, KinkPolicy, KktReport, NcfProblem};

use crate::config::{Experiment, RunConfig};
use crate::{CliError, Oracle, EXIT_FAILED, EXIT_OK};

/// A KKT angle on the unit circle after refinement.
#[derive(Clone, Debug, Serialize)]
pub struct RefinedAngle {
    pub theta: f64,
    pub theta_deg: f64,
    pub kind: ThetaKktKind,
    pub value: f64,
    pub residual: f64,
}

/// Reduces an angle to `[0, 2π)`; rounding can land exactly on `2π`.
fn wrap(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

/// Tangential derivative of `N` at angle `theta`.
fn tangent(p: &NcfProblem, theta: f64, policy: &KinkPolicy) -> Result<f64, CliError> {
    let g = p.grad(&[theta.cos(), theta.sin()], policy)?;
    Ok(-theta.sin() * g[0] + theta.cos() * g[1])
}

/// Refines a grid extremum by bisecting the tangential derivative on the
/// neighbouring grid cells. Flat runs and kinks keep the grid value.
pub fn refine_angle(p: &NcfProblem, theta: f64, grid: usize, policy: &KinkPolicy) -> Result<f64, CliError> {
    let h = 2.0 * PI / grid as f64;
    let (mut lo, mut hi) = (theta - h, theta + h);
    let (mut dlo, dhi) = (tangent(p, lo, policy)?, tangent(p, hi, policy)?);
    if dlo == 0.0 {
        return Ok(wrap(lo));
    }
    if dhi == 0.0 {
        return Ok(wrap(hi));
    }
    if dlo.signum() == dhi.signum() {
        return Ok(wrap(theta));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = tangent(p, mid, policy)?;
        if d == 0.0 {
            return Ok(wrap(mid));
        }
        if d.signum() == dlo.signum() {
            lo = mid;
            dlo = d;
        } else {
            hi = mid;
        }
    }
    // the endpoint with the smaller derivative
    let best = if tangent(p, lo, policy)?.abs() <= tangent(p, hi, policy)?.abs() { lo } else { hi };
    Ok(wrap(best))
}

pub fn refined_angles(p: &NcfProblem, grid: usize, policy: &KinkPolicy) -> Result<Vec<RefinedAngle>, CliError> {
    let g = theta_grid_kkt(p, grid)?;
    g.points
        .into_iter()
        .map(|k| {
            let theta = match k.kind {
                ThetaKktKind::Flat { .. } => k.theta,
                _ => refine_angle(p, k.theta, grid, policy)?,
            };
            let u = [theta.cos(), theta.sin()];
            let r = kkt_residual(p, &u, policy)?;
            Ok(RefinedAngle {
                theta,
                theta_deg: theta.to_degrees(),
                kind: k.kind,
                value: r.objective,
                residual: r.residual,
            })
        })
        .collect()
}

fn candidate_report(p: &NcfProblem, u: &[f64], scan: bool, policy: &KinkPolicy) -> Result<KktReport, CliError> {
    let u = linalg::normalized(u)
        .ok_or_else(|| CliError::Config("candidate directions must be non-zero".into()))?;
    Ok(if scan {
        kkt_residual_scan(p, &u, policy)?
    } else {
        kkt_residual(p, &u, policy)?
    })
}

/// Builds the JSON report and whether every candidate is a KKT point.
pub fn kkt_report(cfg: &RunConfig, oracle: Option<Oracle>, alpha: f64) -> Result<(Value, bool), CliError> {
    if let Some(o) = oracle {
        let data = cfg.build_data()?;
        let alpha = cfg.model.as_ref().map_or(Ok(alpha), |_| cfg.build_model().map(|m| m.alpha()))?;
        let value = match o {
            Oracle::SymSqrelu => serde_json::to_value(analytic_kkt_sym_sqrelu(&data, alpha)?),
            Oracle::SymRelu => serde_json::to_value(analytic_kkt_sym_relu(&data, alpha)?),
        }
        .expect("oracle reports serialize");
        return Ok((json!({ "oracle": value }), true));
    }
    let Experiment::Kkt {
        candidates,
        theta_grid,
        scan,
    } = &cfg.experiment
    else {
        return Err(CliError::Config(format!(
            "the kkt command needs a kkt experiment or --oracle, got {}",
            cfg.experiment.kind()
        )));
    };
    let p = NcfProblem::from_loss(cfg.build_model()?, cfg.build_data()?, &cfg.loss()?)?;
    let tol = ncf_core::ncf::TOL_KKT;
    let reports = candidates
        .iter()
        .map(|u| candidate_report(&p, u, *scan, &cfg.policy))
        .collect::<Result<Vec<_>, _>>()?;
    let all_kkt = reports.iter().all(|r| r.residual <= tol);
    let angles = match theta_grid {
        Some(n) => Some(refined_angles(&p, *n, &cfg.policy)?),
        None => None,
    };
    let verdicts: Vec<bool> = reports.iter().map(|r| r.residual <= tol).collect();
    Ok((
        json!({
            "name": cfg.name,
            "tolerance": tol,
            "candidates": reports,
            "is_kkt": verdicts,
            "theta_grid": angles,
        }),
        all_kkt,
    ))
}

pub fn kkt_command(path: &Path, oracle: Option<Oracle>, alpha: f64) -> Result<i32, CliError> {
    let cfg = RunConfig::load(path)?;
    let (report, ok) = kkt_report(&cfg, oracle, alpha)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(if ok { EXIT_OK } else { EXIT_FAILED })
}
