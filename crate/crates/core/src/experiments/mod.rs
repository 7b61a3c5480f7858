//! Verification harnesses and analytic toy systems.

use serde::Serialize;

use crate::trajectory::Trajectory;

pub mod data;
mod nonbranch;
mod saddle;
mod separable;
mod stability;
mod thm1;
mod toys;

pub use nonbranch::{
    balanced_star, leaky_nonbranch_set, nonbranch_probe, InitOutcome, LeakySetReport, NonbranchReport,
    PairOutcome,
};
pub use saddle::{
    assumption_ratio, build_saddle, build_saddle_fig1, saddle_harness, tech_assumption_probe,
    ProbeReport, SaddleConfig, SaddleReport, SaddleRow, SaddleSpec,
};
pub use separable::{sep_alignment, Alignment, BlockClass, SepConfig, SepReport};
pub use stability::{perturbation_stability, sinusoidal_forcing, StabilityReport, StabilityRow};
pub use thm1::{classify, thm1_harness, Branch, Thm1Config, Thm1Report, Thm1Row};
pub use toys::{
    escape_g, escape_ray_ratios, toy_u1u2, u1u2_closed_form, u1u2_problem, EscapeField, EscapeReport,
    ToyReport,
};

/// A harness report with the trajectories it was computed from.
#[derive(Clone, Debug, Serialize)]
pub struct HarnessOutput<R> {
    pub report: R,
    pub runs: Vec<Trajectory>,
}

impl<R> HarnessOutput<R> {
    pub fn bare(report: R) -> Self {
        HarnessOutput {
            report,
            runs: Vec::new(),
        }
    }
}
