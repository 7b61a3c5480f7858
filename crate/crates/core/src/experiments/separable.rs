//! Per-block directional classification for separable networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::KinkPolicy;
use crate::ncf::{kkt_residual_scan, theta_grid_kkt, NcfProblem, ThetaGrid, TOL_KKT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    Aligned,
    Vanished,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SepConfig {
    /// Blocks with final norm at or below this are vanished.
    #[serde(default)]
    pub vanish_norm: f64,
    /// Also count blocks whose norm shrank over the run as vanished.
    #[serde(default)]
    pub shrink_is_vanish: bool,
    /// Angular tolerance (degrees) for 2-parameter blocks.
    #[serde(default = "default_angle")]
    pub tol_angle_deg: f64,
    /// KKT residual tolerance, relative to `‖g‖ + |λ|`, for larger blocks.
    #[serde(default = "default_rel")]
    pub tol_residual: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_angle() -> f64 {
    2.0
}

fn default_rel() -> f64 {
    1e-3
}

fn default_grid() -> usize {
    100_000
}

impl Default for SepConfig {
    fn default() -> Self {
        SepConfig {
            vanish_norm: 0.0,
            shrink_is_vanish: false,
            tol_angle_deg: default_angle(),
            tol_residual: default_rel(),
            grid: default_grid(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockClass {
    pub block: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// Final angle with the first axis (2-parameter blocks).
    pub angle: Option<f64>,
    /// Distance (degrees) to the nearest non-negative KKT angle, or the
    /// relative KKT residual for larger blocks.
    pub kkt_distance: Option<f64>,
    pub class: Alignment,
}

/// Summary of a per-block classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SepReport {
    pub blocks: Vec<BlockClass>,
    pub aligned: usize,
    pub vanished: usize,
    pub undecided: usize,
    /// `aligned / (aligned + undecided)`; 1 when every block vanished.
    pub aligned_fraction: f64,
    /// KKT sets used for 2-parameter blocks, one per distinct block problem.
    pub grids: Vec<ThetaGrid>,
}

/// Classifies each block of `w_final` against the KKT set of its own NCF
/// `u ↦ zᵀHᵢ(X; u)`: Vanished if small, Aligned if its direction is a
/// non-negative KKT point, Undecided otherwise.
pub fn sep_alignment(
    problem: &NcfProblem,
    w_init: &[f64],
    w_final: &[f64],
    cfg: &SepConfig,
) -> Result<SepReport> {
    let model = problem.model();
    model.check_weights(w_init)?;
    model.check_weights(w_final)?;
    let mut grids: Vec<(NcfProblem, ThetaGrid)> = Vec::new();
    let mut blocks = Vec::with_capacity(model.blocks().len());
    for (i, b) in model.blocks().iter().enumerate() {
        let wi = &w_final[b.range()];
        let initial_norm = linalg::norm(&w_init[b.range()]);
        let final_norm = linalg::norm(wi);
        let vanished = final_norm <= cfg.vanish_norm
            || (cfg.shrink_is_vanish && final_norm < initial_norm);
        let mut class = BlockClass {
            block: i,
            initial_norm,
            final_norm,
            angle: None,
            kkt_distance: None,
            class: Alignment::Vanished,
        };
        if b.len == 2 && final_norm > 0.0 {
            class.angle = Some(wi[1].atan2(wi[0]));
        }
        if vanished {
            blocks.push(class);
            continue;
        }
        let bp = problem.block_problem(i)?;
        if b.len == 2 {
            let grid = match grids.iter().find(|(p, _)| *p == bp) {
                Some((_, g)) => g.clone(),
                None => {
                    let g = theta_grid_kkt(&bp, cfg.grid)?;
                    grids.push((bp.clone(), g.clone()));
                    g
                }
            };
            let scale = grid.points.iter().fold(0.0f64, |m, p| m.max(p.value.abs()));
            let theta = class.angle.expect("nonzero block");
            let dist = grid.distance_nonneg(theta, TOL_KKT * scale.max(1.0)).to_degrees();
            class.kkt_distance = Some(dist);
            class.class = if dist <= cfg.tol_angle_deg {
                Alignment::Aligned
            } else {
                Alignment::Undecided
            };
        } else {
            let u = linalg::scaled(wi, 1.0 / final_norm);
            let r = kkt_residual_scan(&bp, &u, &KinkPolicy::default())?;
            let g = bp.grad(&u, &KinkPolicy::default())?;
            let rel = r.residual / (linalg::norm(&g) + r.lambda.abs()).max(f64::MIN_POSITIVE);
            class.kkt_distance = Some(rel);
            class.class = if rel <= cfg.tol_residual && r.nonneg {
                Alignment::Aligned
            } else {
                Alignment::Undecided
            };
        }
        blocks.push(class);
    }
    if blocks.is_empty() {
        return Err(Error::dim("model has no blocks"));
    }
    let count = |a: Alignment| blocks.iter().filter(|b| b.class == a).count();
    let (aligned, vanished, undecided) = (
        count(Alignment::Aligned),
        count(Alignment::Vanished),
        count(Alignment::Undecided),
    );
    Ok(SepReport {
        aligned_fraction: if aligned + undecided == 0 {
            1.0
        } else {
            aligned as f64 / (aligned + undecided) as f64
        },
        blocks,
        aligned,
        vanished,
        undecided,
        grids: grids.into_iter().map(|(_, g)| g).collect(),
    })
}
