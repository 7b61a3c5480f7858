//! Losses, the training gradient flow and its explicit Euler integrators.

mod constants;
mod integrator;
mod loss;
mod train;

pub use constants::{norm_growth_check, Constants};
pub use integrator::{Horizon, IntegratorConfig, Scheme, StepView};
pub(crate) use integrator::{run_field, VectorField};
pub use loss::{beta_hat, loss_residual_grad, loss_value, Loss, LossKind, Reduction};
pub use train::{rescaled_train_flow, train_flow, train_flow_from, TrainField};
