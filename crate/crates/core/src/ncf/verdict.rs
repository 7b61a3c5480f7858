use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ConvergedToZero,
    DirectionalLimit,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalVerdict {
    pub outcome: Outcome,
    pub limit_direction: Option<Vec<f64>>,
    /// `min ‖u(t)‖` over recorded `t ≥ t_settle`.
    pub eta_estimate: Option<f64>,
    pub t_settle: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictConfig {
    /// Trailing window, in accepted steps.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_tol_angle")]
    pub tol_angle: f64,
    /// Absolute zero threshold; `None` means `1e-6·‖u₀‖`.
    #[serde(default)]
    pub tol_zero: Option<f64>,
}

fn default_window() -> usize {
    200
}

fn default_tol_angle() -> f64 {
    1e-4
}

impl Default for VerdictConfig {
    fn default() -> Self {
        VerdictConfig {
            window: default_window(),
            tol_angle: default_tol_angle(),
            tol_zero: None,
        }
    }
}

/// Verdict with the default window and the given tolerances.
pub fn direction_verdict(traj: &Trajectory, tol_angle: f64, tol_zero: f64) -> Result<DirectionalVerdict> {
    direction_verdict_with(
        traj,
        &VerdictConfig {
            tol_angle,
            tol_zero: Some(tol_zero),
            ..Default::default()
        },
    )
}

/// Decides whether a flow has collapsed to zero, settled in direction, or
/// neither, from the snapshots in the trailing window. When the window holds
/// fewer than two snapshots the last two are compared instead.
pub fn direction_verdict_with(traj: &Trajectory, cfg: &VerdictConfig) -> Result<DirectionalVerdict> {
    let snaps: Vec<(f64, usize, &[f64])> = traj.snapshots().map(|(r, w)| (r.t, r.step, w)).collect();
    let Some(&(_, last_step, w_last)) = snaps.last() else {
        return Err(Error::domain("trajectory has no state snapshots"));
    };
    let tol_zero = cfg
        .tol_zero
        .unwrap_or_else(|| 1e-6 * linalg::norm(snaps[0].2));
    let start = last_step.saturating_sub(cfg.window);
    let mut window: Vec<&(f64, usize, &[f64])> = snaps.iter().filter(|s| s.1 >= start).collect();
    if window.len() < 2 && snaps.len() >= 2 {
        window = snaps[snaps.len() - 2..].iter().collect();
    }
    let n_last = linalg::norm(w_last);
    let undecided = DirectionalVerdict {
        outcome: Outcome::Undecided,
        limit_direction: None,
        eta_estimate: None,
        t_settle: None,
    };

    if n_last < tol_zero {
        let n_first = linalg::norm(window[0].2);
        if n_last > n_first {
            return Ok(undecided);
        }
        // earliest time after which the norm stays below tol_zero
        let mut t_settle = traj.end_time();
        for r in traj.records.iter().rev() {
            if r.norm_w < tol_zero {
                t_settle = r.t;
            } else {
                break;
            }
        }
        return Ok(DirectionalVerdict {
            outcome: Outcome::ConvergedToZero,
            limit_direction: None,
            eta_estimate: None,
            t_settle: Some(t_settle),
        });
    }

    let dir = linalg::scaled(w_last, 1.0 / n_last);
    let displacement = window
        .iter()
        .map(|s| angle_to(s.2, &dir))
        .fold(0.0, f64::max);
    if !(displacement < cfg.tol_angle) {
        return Ok(undecided);
    }
    let mut t_settle = traj.end_time();
    for s in snaps.iter().rev() {
        if angle_to(s.2, &dir) < cfg.tol_angle {
            t_settle = s.0;
        } else {
            break;
        }
    }
    let eta = traj
        .records
        .iter()
        .filter(|r| r.t >= t_settle)
        .map(|r| r.norm_w)
        .fold(f64::INFINITY, f64::min);
    Ok(DirectionalVerdict {
        outcome: Outcome::DirectionalLimit,
        limit_direction: Some(dir),
        eta_estimate: Some(eta),
        t_settle: Some(t_settle),
    })
}

fn angle_to(w: &[f64], dir: &[f64]) -> f64 {
    if linalg::norm_sq(w) == 0.0 {
        std::f64::consts::PI
    } else {
        linalg::angle_between(w, dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Record, TrajectoryMeta};

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            meta: TrajectoryMeta::default(),
            records: states
                .into_iter()
                .enumerate()
                .map(|(i, w)| Record {
                    t: i as f64,
                    step: i,
                    loss: 0.0,
                    norm_w: linalg::norm(&w),
                    block_norms: vec![],
                    block_cos: vec![],
                    kink_flag: false,
                    w: Some(w),
                })
                .collect(),
            stats: Default::default(),
        }
    }

    #[test]
    fn constant_trajectory_has_its_direction() {
        let v = direction_verdict(&traj(vec![vec![3.0, 4.0]; 5]), 1e-4, 1e-9).unwrap();
        assert_eq!(v.outcome, Outcome::DirectionalLimit);
        assert!(linalg::dist(&v.limit_direction.unwrap(), &[0.6, 0.8]) < 1e-15);
        assert_eq!(v.t_settle, Some(0.0));
        assert_eq!(v.eta_estimate, Some(5.0));
    }

    #[test]
    fn decaying_trajectory_converges_to_zero() {
        let states = (0..50).map(|k| vec![0.5f64.powi(k), 0.0]).collect();
        let v = direction_verdict(&traj(states), 1e-4, 1e-6).unwrap();
        assert_eq!(v.outcome, Outcome::ConvergedToZero);
        assert!(v.eta_estimate.is_none());
        assert_eq!(v.t_settle, Some(20.0));
    }

    #[test]
    fn rotating_trajectory_is_undecided() {
        let states = (0..50)
            .map(|k| vec![(0.1 * k as f64).cos(), (0.1 * k as f64).sin()])
            .collect();
        let v = direction_verdict(&traj(states), 1e-4, 1e-6).unwrap();
        assert_eq!(v.outcome, Outcome::Undecided);
        assert!(direction_verdict(&Trajectory::default(), 1e-4, 1e-6).is_err());
    }
}
