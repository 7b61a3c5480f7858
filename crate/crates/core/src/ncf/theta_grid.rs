//! Brute-force KKT search for problems with two parameters: sample the
//! circle densely, bracket sign changes of the angular derivative and bisect.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::KinkPolicy;
use crate::ncf::NcfProblem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaKktKind {
    /// Derivative changes from + to −.
    Max,
    /// Derivative changes from − to +.
    Min,
    /// A run of grid points on which the derivative vanishes; `lo..=hi`
    /// counter-clockwise (possibly wrapping through 0).
    Flat { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaKkt {
    /// Angle in `[0, 2π)`; the midpoint for flat runs.
    pub theta: f64,
    pub value: f64,
    pub kind: ThetaKktKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaGrid {
    pub points: Vec<ThetaKkt>,
    pub grid: usize,
}

fn unit(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

fn ccw_offset(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(TAU)
}

impl ThetaGrid {
    /// Locates the stationary angles of `f(θ)` from `df(θ)`, its derivative.
    /// Grid points with `|df| ≤ flat_rel·max|df|` are treated as flat.
    pub fn from_fn(
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64,
        grid: usize,
        flat_rel: f64,
        bisect_tol: f64,
    ) -> Self {
        let step = TAU / grid as f64;
        let d: Vec<f64> = (0..grid).map(|k| df(k as f64 * step)).collect();
        let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let flat_tol = flat_rel * scale;
        let flat: Vec<bool> = d.iter().map(|v| v.abs() <= flat_tol).collect();
        let mut points = Vec::new();

        if flat.iter().all(|&f| f) {
            points.push(ThetaKkt {
                theta: 0.0,
                value: f(0.0),
                kind: ThetaKktKind::Flat { lo: 0.0, hi: TAU },
            });
            return ThetaGrid { points, grid };
        }

        // flat runs, walked from a non-flat start so none is split
        let start = flat.iter().position(|&f| !f).unwrap();
        let mut k = 0;
        while k < grid {
            let i = (start + k) % grid;
            if flat[i] {
                let mut len = 0;
                while flat[(i + len) % grid] {
                    len += 1;
                }
                let lo = i as f64 * step;
                let hi = ((i + len - 1) % grid) as f64 * step;
                let left = d[(i + grid - 1) % grid];
                let right = d[(i + len) % grid];
                // an isolated grid point landing on a simple root
                let kind = if len == 1 && left * right < 0.0 {
                    if left > 0.0 {
                        ThetaKktKind::Max
                    } else {
                        ThetaKktKind::Min
                    }
                } else {
                    ThetaKktKind::Flat { lo, hi }
                };
                let mid = (lo + 0.5 * ccw_offset(lo, hi)).rem_euclid(TAU);
                points.push(ThetaKkt {
                    theta: mid,
                    value: f(mid),
                    kind,
                });
                k += len;
            } else {
                k += 1;
            }
        }

        for i in 0..grid {
            let j = (i + 1) % grid;
            if flat[i] || flat[j] || d[i].signum() == d[j].signum() {
                continue;
            }
            let (mut a, mut b) = (i as f64 * step, (i + 1) as f64 * step);
            let sa = d[i].signum();
            while b - a > bisect_tol {
                let m = 0.5 * (a + b);
                if df(m).signum() == sa {
                    a = m;
                } else {
                    b = m;
                }
            }
            let theta = (0.5 * (a + b)).rem_euclid(TAU);
            points.push(ThetaKkt {
                theta,
                value: f(theta),
                kind: if sa > 0.0 {
                    ThetaKktKind::Max
                } else {
                    ThetaKktKind::Min
                },
            });
        }
        points.sort_by(|a, b| a.theta.total_cmp(&b.theta));
        ThetaGrid { points, grid }
    }

    /// Angular distance from `theta` to the nearest KKT angle (zero inside a
    /// flat run).
    pub fn distance(&self, theta: f64) -> f64 {
        self.distance_filtered(theta, |_| true)
    }

    /// As [`ThetaGrid::distance`] restricted to KKT points with `N ≥ −tol`.
    pub fn distance_nonneg(&self, theta: f64, tol: f64) -> f64 {
        self.distance_filtered(theta, |p| p.value >= -tol)
    }

    fn distance_filtered(&self, theta: f64, keep: impl Fn(&ThetaKkt) -> bool) -> f64 {
        self.points
            .iter()
            .filter(|p| keep(p))
            .map(|p| match p.kind {
                ThetaKktKind::Flat { lo, hi } => {
                    if ccw_offset(lo, theta) <= ccw_offset(lo, hi) {
                        0.0
                    } else {
                        linalg::circular_distance(theta, lo).min(linalg::circular_distance(theta, hi))
                    }
                }
                _ => linalg::circular_distance(theta, p.theta),
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn maxima(&self) -> impl Iterator<Item = &ThetaKkt> {
        self.points.iter().filter(|p| p.kind == ThetaKktKind::Max)
    }
}

/// θ-grid KKT set of a problem whose weights are a single point of `ℝ²`,
/// `N(θ) = N([cos θ, sin θ])`.
pub fn theta_grid_kkt(p: &NcfProblem, grid: usize) -> Result<ThetaGrid> {
    if p.model().param_dim() != 2 {
        return Err(Error::Inapplicable(format!(
            "angle grid needs 2 parameters, model has {}",
            p.model().param_dim()
        )));
    }
    if grid < 8 {
        return Err(Error::domain("grid needs at least 8 points"));
    }
    let policy = KinkPolicy::default();
    let f = |t: f64| p.value_unchecked(&unit(t));
    let df = |t: f64| {
        let mut g = [0.0; 2];
        p.grad_into(&unit(t), &policy, &mut g);
        -t.sin() * g[0] + t.cos() * g[1]
    };
    Ok(ThetaGrid::from_fn(f, df, grid, 1e-9, 1e-10))
}
