//! Closed-form KKT points for symmetric data.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{Dataset, KinkPolicy, ModelKind, NetworkModel};
use crate::ncf::{kkt_residual, kkt_residual_scan, KktReport, NcfProblem};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymSqreluOracle {
    /// `±v` for every eigenvector `v` of `M`, in order of decreasing eigenvalue.
    pub reports: Vec<KktReport>,
    pub eigenvalues: Vec<f64>,
    /// Repeated eigenvalues: every unit vector of the eigenspace is KKT and
    /// the returned basis is one arbitrary choice.
    pub degenerate_spectrum: bool,
}

/// KKT points of a single squared-ReLU neuron, `N(u) = Σᵢ yᵢ σ(xᵢᵀu)²`, on data
/// `{xᵢ, yᵢ} ∪ {−xᵢ, yᵢ}`.
///
/// Since `σ(s)² + σ(−s)² = (1+α²)s²`, `N(u) = (1+α²)·uᵀMu` with
/// `M = Σ_{i ≤ n/2} yᵢxᵢxᵢᵀ`, whose KKT points on the sphere are the
/// eigenvectors of `M`. The mirrors must keep their labels: with flipped
/// labels the two halves give `(1−α²)s|s|`, which is not quadratic.
pub fn analytic_kkt_sym_sqrelu(data: &Dataset, alpha: f64) -> Result<SymSqreluOracle> {
    let core = data.even_symmetric_core()?;
    let d = data.dim();
    let mut m = DMatrix::<f64>::zeros(d, d);
    for (x, &y) in core.inputs().zip(core.labels()) {
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] += y * x[r] * x[c];
            }
        }
    }
    if m.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("M = Σ yᵢxᵢxᵢᵀ vanishes".into()));
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let degenerate_spectrum = eigenvalues
        .windows(2)
        .any(|w| (w[0] - w[1]).abs() <= 1e-12 * scale);

    let model = NetworkModel::new(
        ModelKind::SquaredRelu {
            alpha,
            signs: vec![1.0],
        },
        d,
    )?;
    let p = NcfProblem::new(model, data.clone(), data.labels().to_vec())?;
    let policy = KinkPolicy::default();
    let mut reports = Vec::with_capacity(2 * d);
    for &i in &order {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let v = linalg::normalized(&v).expect("eigenvectors are nonzero");
        for sign in [1.0, -1.0] {
            reports.push(kkt_residual(&p, &linalg::scaled(&v, sign), &policy)?);
        }
    }
    Ok(SymSqreluOracle {
        reports,
        eigenvalues,
        degenerate_spectrum,
    })
}

/// The zero-objective KKT family `{(0, û) : ûᵀq = 0, ‖û‖ = 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroFamily {
    pub q: Vec<f64>,
    /// Orthonormal basis of `q⊥`; every unit `û` in its span gives a KKT
    /// point `(0, û)` with `N = λ = 0`.
    pub basis: Vec<Vec<f64>>,
    /// Reports at `(0, b)` for each basis vector `b`.
    pub samples: Vec<KktReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymReluOracle {
    /// `(±1/√2, ±q/(√2‖q‖))`, same signs first.
    pub reports: Vec<KktReport>,
    pub zero_family: ZeroFamily,
}

/// KKT points of one two-layer neuron `v·σ(uᵀx)` on data
/// `{xᵢ, yᵢ} ∪ {−xᵢ, −yᵢ}`, `α ≠ −1`.
///
/// Here `σ(s) − σ(−s) = (1+α)s`, so `N(v, u) = (1+α)·v·qᵀu` with
/// `q = Σ_{i ≤ n/2} yᵢxᵢ`.
pub fn analytic_kkt_sym_relu(data: &Dataset, alpha: f64) -> Result<SymReluOracle> {
    if alpha == -1.0 {
        return Err(Error::domain("alpha = -1 makes the symmetric objective vanish"));
    }
    let core = data.symmetric_core()?;
    let d = data.dim();
    let mut q = vec![0.0; d];
    for (x, &y) in core.inputs().zip(core.labels()) {
        linalg::axpy(y, x, &mut q);
    }
    let qn = linalg::norm(&q);
    if qn == 0.0 {
        return Err(Error::Degenerate("q = Σ yᵢxᵢ vanishes".into()));
    }
    let p = NcfProblem::new(
        NetworkModel::two_layer(alpha, 1, d),
        data.clone(),
        data.labels().to_vec(),
    )?;
    let policy = KinkPolicy::default();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut reports = Vec::with_capacity(4);
    for (sv, su) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
        let mut w = vec![sv * r];
        w.extend(q.iter().map(|c| su * r * c / qn));
        reports.push(kkt_residual_scan(&p, &w, &policy)?);
    }

    let basis = orthonormal_complement(&q);
    let samples = basis
        .iter()
        .map(|b| {
            let mut w = vec![0.0];
            w.extend_from_slice(b);
            kkt_residual_scan(&p, &w, &policy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SymReluOracle {
        reports,
        zero_family: ZeroFamily { q, basis, samples },
    })
}

/// Orthonormal basis of the complement of `q` (Gram–Schmidt on the
/// standard basis).
fn orthonormal_complement(q: &[f64]) -> Vec<Vec<f64>> {
    let d = q.len();
    let mut basis: Vec<Vec<f64>> = vec![linalg::normalized(q).expect("nonzero q")];
    for k in 0..d {
        if basis.len() == d {
            break;
        }
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        for b in &basis {
            let c = linalg::dot(&e, b);
            linalg::axpy(-c, b, &mut e);
        }
        if linalg::norm(&e) > 1e-8 {
            basis.push(linalg::normalized(&e).unwrap());
        }
    }
    basis.remove(0);
    basis
}

/// Outcome of reducing a two-layer KKT point `(v, u)` to the one-homogeneous
/// problem `max_{‖û‖=1} zᵀσ(Xᵀû)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub v: f64,
    /// `||v| − 1/√2|`
    pub v_deviation: f64,
    pub u_hat: Vec<f64>,
    pub reduced_objective: f64,
    /// `‖Σᵢ zᵢσ′(xᵢᵀû)xᵢ − N_r(û)·û‖`, minimized over the kink slopes.
    pub reduced_residual: f64,
}

impl ReducedReport {
    pub fn passes(&self, tol_v: f64, tol_residual: f64) -> bool {
        self.v_deviation <= tol_v && self.reduced_residual <= tol_residual
    }
}

/// A KKT point `(v, u)` of one two-layer neuron with nonzero objective has
/// `|v| = ‖u‖ = 1/√2`, and `√2·u` is a KKT point of the reduced problem.
/// Reports both parts; the caller picks tolerances.
pub fn kkt_reduce_two_layer(v: f64, u: &[f64], p: &NcfProblem) -> Result<ReducedReport> {
    let alpha = match p.model().kind() {
        ModelKind::TwoLayerLeakyRelu { alpha, hidden: 1 } => *alpha,
        _ => {
            return Err(Error::Inapplicable(
                "reduction needs a single two-layer neuron".into(),
            ))
        }
    };
    if u.len() != p.model().input_dim() {
        return Err(Error::dim("u must match the input dimension"));
    }
    let total = v * v + linalg::norm_sq(u);
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("(v, u) must be unit norm, got {}", total.sqrt())));
    }
    let act = |s: f64| s.max(alpha * s);
    let objective: f64 = p
        .data()
        .inputs()
        .zip(p.z())
        .map(|(x, z)| z * v * act(linalg::dot(x, u)))
        .sum();
    if objective.abs() <= 1e-12 {
        return Err(Error::Inapplicable("objective vanishes at (v, u)".into()));
    }
    let u_hat = linalg::scaled(u, std::f64::consts::SQRT_2);
    let reduced_objective: f64 = p
        .data()
        .inputs()
        .zip(p.z())
        .map(|(x, z)| z * act(linalg::dot(x, &u_hat)))
        .sum();
    let tau = KinkPolicy::default().tau_kink;
    let slopes = [0.0, alpha, 0.5 * (1.0 + alpha), 1.0];
    let xn_un = linalg::norm(&u_hat);
    let reduced_residual = slopes
        .iter()
        .filter(|&&s0| (alpha.min(1.0)..=alpha.max(1.0)).contains(&s0))
        .map(|&s0| {
            let mut g = vec![0.0; u.len()];
            for (x, z) in p.data().inputs().zip(p.z()) {
                let s = linalg::dot(x, &u_hat);
                let slope = if s.abs() <= tau * linalg::norm(x) * xn_un {
                    s0
                } else if s > 0.0 {
                    alpha.max(1.0)
                } else {
                    alpha.min(1.0)
                };
                linalg::axpy(z * slope, x, &mut g);
            }
            linalg::axpy(-reduced_objective, &u_hat, &mut g);
            linalg::norm(&g)
        })
        .fold(f64::INFINITY, f64::min);
    Ok(ReducedReport {
        v,
        v_deviation: (v.abs() - std::f64::consts::FRAC_1_SQRT_2).abs(),
        u_hat,
        reduced_objective,
        reduced_residual,
    })
}
