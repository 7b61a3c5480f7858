//! Gradient-flow dynamics of two-homogeneous networks near small
//! initializations and saddle points.
//!
//! The crate is organized around four layers:
//!
//! - [`models`]: the two-homogeneous network zoo, subgradient selection with an
//!   explicit kink policy, and homogeneity/Euler calculus checks.
//! - [`ncf`]: the neural correlation function `N(u) = zᵀH(X;u)`, its positive
//!   gradient flow, KKT residuals on the unit sphere, directional-convergence
//!   verdicts and closed-form KKT oracles.
//! - [`flow`]: losses, the training gradient flow (plain and rescaled by the
//!   initialization scale) and the growth constants that bound it.
//! - [`experiments`]: harnesses that put the pieces together: approximation
//!   of the training flow by the NCF flow, separable alignment, saddle escape,
//!   and the small analytic toy systems.

pub mod error;
pub mod experiments;
pub mod flow;
pub mod linalg;
pub mod models;
pub mod ncf;
pub mod rng;
pub mod trajectory;

pub use error::{Error, FlowError, Result};
pub use models::{Dataset, KinkPolicy, ModelKind, NetworkModel, WeightVector};
pub use ncf::{DirectionalVerdict, KktReport, NcfProblem};
pub use trajectory::{FlowStats, Record, Trajectory, TrajectoryMeta};
