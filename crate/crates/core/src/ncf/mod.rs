//! The neural correlation function `N_z(u) = zᵀH(X; u)`.
//!
//! Near a small initialization the training flow follows the positive flow
//! `u̇ ∈ ∂N_z(u)` with `z = −ℓ′(0, y)`, and `u/‖u‖` converges to a KKT point
//! of `max N_z(u)` on the unit sphere (or `u` collapses to zero).

mod analytic;
mod flow;
mod kkt;
mod theta_grid;
mod verdict;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Loss;
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, NetworkModel};

pub use analytic::{
    analytic_kkt_sym_relu, analytic_kkt_sym_sqrelu, kkt_reduce_two_layer, ReducedReport,
    SymReluOracle, SymSqreluOracle, ZeroFamily,
};
pub use flow::{ncf_flow, ncf_flow_forced, ncf_flow_with_refs};
pub use kkt::{kkt_residual, kkt_residual_scan, KinkScan, KktReport, TOL_KKT};
pub use theta_grid::{theta_grid_kkt, ThetaGrid, ThetaKkt, ThetaKktKind};
pub use verdict::{direction_verdict, direction_verdict_with, DirectionalVerdict, Outcome, VerdictConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcfProblem {
    model: NetworkModel,
    data: Dataset,
    z: Vec<f64>,
}

impl NcfProblem {
    pub fn new(model: NetworkModel, data: Dataset, z: Vec<f64>) -> Result<Self> {
        model.check_data(&data)?;
        if z.len() != data.len() {
            return Err(Error::dim(format!(
                "{} correlation weights for {} samples",
                z.len(),
                data.len()
            )));
        }
        if !linalg::all_finite(&z) {
            return Err(Error::domain("correlation weights must be finite"));
        }
        Ok(NcfProblem { model, data, z })
    }

    /// The problem governing training from a small initialization:
    /// `z = −ℓ′(0, y)`.
    pub fn from_loss(model: NetworkModel, data: Dataset, loss: &Loss) -> Result<Self> {
        let z = loss.neg_grad_at_zero(data.labels());
        Self::new(model, data, z)
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// `z = 0`: every point is stationary.
    pub fn is_degenerate(&self) -> bool {
        self.z.iter().all(|&v| v == 0.0)
    }

    /// `N(u) = zᵀH(X; u)`.
    pub fn value(&self, u: &[f64]) -> Result<f64> {
        self.model.check_weights(u)?;
        Ok(self.value_unchecked(u))
    }

    pub(crate) fn value_unchecked(&self, u: &[f64]) -> f64 {
        self.data
            .inputs()
            .zip(&self.z)
            .map(|(x, zi)| zi * self.model.eval_unchecked(x, u))
            .sum()
    }

    /// `Σᵢ zᵢ sᵢ` with `sᵢ ∈ ∂H(xᵢ; u)` chosen by `policy`.
    pub fn grad(&self, u: &[f64], policy: &KinkPolicy) -> Result<Vec<f64>> {
        self.model.weighted_subgrad(&self.data, u, &self.z, policy)
    }

    pub(crate) fn grad_into(&self, u: &[f64], policy: &KinkPolicy, out: &mut [f64]) {
        self.model
            .weighted_subgrad_into(&self.data, u, &self.z, policy, out);
    }

    /// The NCF of block `i` alone, `u ↦ zᵀHᵢ(X; u)`.
    pub fn block_problem(&self, i: usize) -> Result<NcfProblem> {
        let (model, coord) = self.model.block_model(i)?;
        let data = match coord {
            Some(c) => Dataset::new(
                1,
                self.data.inputs().map(|x| x[c]).collect(),
                self.data.labels().to_vec(),
            )?,
            None => self.data.clone(),
        };
        Self::new(model, data, self.z.clone())
    }

    pub fn with_z(&self, z: Vec<f64>) -> Result<NcfProblem> {
        Self::new(self.model.clone(), self.data.clone(), z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::LossKind;

    #[test]
    fn single_neuron_values() {
        let p = NcfProblem::new(
            NetworkModel::squared_relu(1, 2),
            Dataset::new(2, vec![1.0, 0.0], vec![1.0]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        assert_eq!(p.value(&[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(p.value(&[0.0, 0.0]).unwrap(), 0.0);
        let z0 = p.with_z(vec![0.0]).unwrap();
        assert!(z0.is_degenerate());
        assert_eq!(z0.grad(&[1.0, 0.5], &KinkPolicy::default()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn z_from_loss() {
        let data = Dataset::new(1, vec![1.0, -1.0], vec![2.0, -4.0]).unwrap();
        let m = NetworkModel::squared_relu(1, 1);
        let sq = NcfProblem::from_loss(m.clone(), data.clone(), &Loss::sum(LossKind::Square)).unwrap();
        assert_eq!(sq.z(), &[2.0, -4.0]);
        let lg = NcfProblem::from_loss(m, data, &Loss::sum(LossKind::Logistic)).unwrap();
        assert_eq!(lg.z(), &[1.0, -2.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let data = Dataset::new(1, vec![1.0], vec![1.0]).unwrap();
        assert!(NcfProblem::new(NetworkModel::squared_relu(1, 1), data, vec![1.0, 2.0]).is_err());
    }
}
