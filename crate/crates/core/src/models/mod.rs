//! Two-homogeneous network models.
//!
//! Every model satisfies `H(x; c·w) = c²·H(x; w)` for `c ≥ 0`. Subgradients
//! are single elements of the Clarke subdifferential, picked by a
//! [`KinkPolicy`] wherever an activation sits exactly at its kink.

mod checks;
mod dataset;
mod kink;
mod network;
mod weights;

pub use checks::{
    beta_estimate, beta_separable, check_homogeneity, euler_residual, subgrad_scaling_residual,
    BETA_SAFETY,
};
pub use dataset::Dataset;
pub use kink::KinkPolicy;
pub use network::{Block, DenseLayer, ModelKind, NetworkModel};
pub(crate) use network::Slope;
pub use weights::{SaddlePartition, WeightVector};
