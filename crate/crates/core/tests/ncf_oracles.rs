//! The correlation function against independent closed forms: the angle
//! formula in the plane, 2×2 eigen-decompositions, and direct evaluation of
//! the symmetric two-layer objective.

use ncf_core::experiments::data::{fig1_dataset, fig1_model, gaussian_init};
use ncf_core::flow::{Horizon, IntegratorConfig};
use ncf_core::ncf::{
    analytic_kkt_sym_relu, analytic_kkt_sym_sqrelu, direction_verdict, kkt_reduce_two_layer,
    kkt_residual, ncf_flow, ncf_flow_with_refs, Outcome,
};
use ncf_core::{Dataset, Error, KinkPolicy, ModelKind, NcfProblem, NetworkModel, WeightVector};
use proptest::prelude::*;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, b) / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

/// `Σᵢ yᵢ max(0, [cos θ, sin θ]ᵀxᵢ)²` written out directly.
fn n_theta(data: &Dataset, theta: f64) -> f64 {
    data.inputs()
        .zip(data.labels())
        .map(|(x, y)| y * (theta.cos() * x[0] + theta.sin() * x[1]).max(0.0).powi(2))
        .sum()
}

fn fig3_problem() -> NcfProblem {
    let data = fig1_dataset().unwrap();
    let y = data.labels().to_vec();
    NcfProblem::new(NetworkModel::squared_relu(1, 2), data, y).unwrap()
}

/// Top eigenvector of a symmetric 2×2 matrix in closed form.
fn top_eigvec_2x2(a: f64, b: f64, d: f64) -> [f64; 2] {
    let lam = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + b * b).sqrt();
    let v = if b.abs() > 0.0 { [b, lam - a] } else if a >= d { [1.0, 0.0] } else { [0.0, 1.0] };
    let n = norm(&v);
    [v[0] / n, v[1] / n]
}

#[test]
fn value_examples() {
    let one = Dataset::new(2, vec![1.0, 0.0], vec![1.0]).unwrap();
    let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), one, vec![1.0]).unwrap();
    assert_eq!(p.value(&[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(p.value(&[0.0, 0.0]).unwrap(), 0.0);
    let z0 = p.with_z(vec![0.0]).unwrap();
    assert_eq!(z0.grad(&[0.3, 0.4], &KinkPolicy::default()).unwrap(), vec![0.0, 0.0]);

    let p = fig3_problem();
    for k in 0..72 {
        let th = k as f64 * PI / 36.0 + 0.01;
        let got = p.value(&[th.cos(), th.sin()]).unwrap();
        let want = n_theta(p.data(), th);
        assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn residual_vanishes_when_every_neuron_is_off() {
    let data = Dataset::new(2, vec![-1.0, 0.2, -0.5, -0.5], vec![1.0, -2.0]).unwrap();
    let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), data, vec![1.0, -2.0]).unwrap();
    let r = kkt_residual(&p, &[1.0, 0.0], &KinkPolicy::default()).unwrap();
    assert_eq!(r.residual, 0.0);
    assert_eq!(r.objective, 0.0);
    assert!(r.nonneg);
    assert!(kkt_residual(&p, &[f64::NAN, 0.0], &KinkPolicy::default()).is_err());
}

#[test]
fn non_kkt_angles_have_large_residual() {
    let p = fig3_problem();
    // KKT angles from sign changes of the formula's derivative
    let grid = 3600;
    let h = 1e-7;
    let deriv = |t: f64| (n_theta(p.data(), t + h) - n_theta(p.data(), t - h)) / (2.0 * h);
    let mut kkt = Vec::new();
    for k in 0..grid {
        let a = 2.0 * PI * k as f64 / grid as f64;
        let b = 2.0 * PI * (k + 1) as f64 / grid as f64;
        if deriv(a).signum() != deriv(b).signum() {
            kkt.push(0.5 * (a + b));
        }
    }
    assert!(kkt.len() >= 2);
    let far = |t: f64| {
        kkt.iter().all(|&k| {
            let d = (t - k).rem_euclid(2.0 * PI);
            d.min(2.0 * PI - d) >= 5f64.to_radians()
        })
    };
    let mut checked = 0;
    for k in 0..360 {
        let t = (k as f64 + 0.37).to_radians();
        if !far(t) {
            continue;
        }
        let r = kkt_residual(&p, &[t.cos(), t.sin()], &KinkPolicy::default()).unwrap();
        // for unit u in the plane the residual is the tangential slope |N′(θ)|
        let want = deriv(t).abs();
        assert!(r.residual > 1e-3, "θ = {t}: {}", r.residual);
        assert!((r.residual - want).abs() <= 1e-5 * (1.0 + want), "θ = {t}");
        checked += 1;
    }
    assert!(checked > 200);
}

#[test]
fn sym_sqrelu_axis_example() {
    let core = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![5.0, -4.0]).unwrap();
    for alpha in [0.0, 0.3] {
        let o = analytic_kkt_sym_sqrelu(&core.mirrored_even(), alpha).unwrap();
        assert!(!o.degenerate_spectrum);
        assert_eq!(o.eigenvalues, vec![5.0, -4.0]);
        let s = 1.0 + alpha * alpha;
        let expect = [([1.0, 0.0], 5.0 * s), ([-1.0, 0.0], 5.0 * s), ([0.0, 1.0], -4.0 * s), ([0.0, -1.0], -4.0 * s)];
        for (r, (u, obj)) in o.reports.iter().zip(expect) {
            assert!(angle_between(&r.u, &u) < 1e-12, "{:?}", r.u);
            assert!((r.objective - obj).abs() < 1e-12);
            assert!(r.residual <= 1e-8);
            assert_eq!(r.lambda, 2.0 * r.objective);
        }
    }
}

#[test]
fn sym_sqrelu_isotropic_and_fig1_core() {
    let core = Dataset::new(2, vec![0.6, 0.8, -0.8, 0.6], vec![1.0, 1.0]).unwrap();
    let o = analytic_kkt_sym_sqrelu(&core.mirrored_even(), 0.0).unwrap();
    assert!(o.degenerate_spectrum);
    assert_eq!(o.reports.len(), 4);
    assert!(o.reports.iter().all(|r| r.residual <= 1e-8));

    // symmetric core of the figure dataset: M = Σ yᵢxᵢxᵢᵀ over the x₁ > 0 half
    let data = fig1_dataset().unwrap();
    let half: Vec<usize> = (0..data.len()).filter(|&i| data.x(i)[0] > 1e-12).collect();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    for &i in &half {
        let x = data.x(i);
        let y = data.labels()[i];
        inputs.extend_from_slice(x);
        labels.push(y);
        a += y * x[0] * x[0];
        b += y * x[0] * x[1];
        d += y * x[1] * x[1];
    }
    let core = Dataset::new(2, inputs, labels).unwrap();
    let o = analytic_kkt_sym_sqrelu(&core.mirrored_even(), 0.0).unwrap();
    let top = top_eigvec_2x2(a, b, d);
    assert!(angle_between(&o.reports[0].u, &top).min(angle_between(&o.reports[0].u, &[-top[0], -top[1]])) < 1e-9);
    assert!(angle_between(&top, &[1.0, 0.0]).min(angle_between(&top, &[-1.0, 0.0])) < 1e-9);
    assert!(o.reports.iter().all(|r| r.residual <= 1e-8));
}

#[test]
fn sym_relu_examples() {
    let data = Dataset::new(2, vec![1.0, 0.0], vec![1.0]).unwrap().mirrored();
    let o = analytic_kkt_sym_relu(&data, 0.0).unwrap();
    let r = &o.reports[0];
    assert_eq!(format!("{:.16}", r.u[0]), "0.7071067811865476");
    assert!((r.u[1] - FRAC_1_SQRT_2).abs() < 1e-15 && r.u[2].abs() < 1e-15);
    // v·Σ yᵢ max(0, uᵀxᵢ) directly: (1/√2)(1/√2) from the unmirrored sample
    assert!((r.objective - 0.5).abs() < 1e-15);
    assert!(o.reports.iter().all(|r| r.residual <= 1e-8));
    for s in &o.zero_family.samples {
        assert_eq!(s.objective, 0.0);
        assert!(s.residual <= 1e-8);
    }

    let p = NcfProblem::new(NetworkModel::two_layer(0.0, 1, 2), data.clone(), data.labels().to_vec()).unwrap();
    let red = kkt_reduce_two_layer(r.u[0], &r.u[1..], &p).unwrap();
    assert!(red.passes(1e-12, 1e-8), "{red:?}");
    assert!(matches!(kkt_reduce_two_layer(1.0, &[0.0, 0.0], &p), Err(Error::Inapplicable(_))));
    assert!(analytic_kkt_sym_relu(&Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap(), 0.0).is_err());
}

#[test]
fn flow_finds_a_reducible_kkt_point() {
    // labels y = sign(x₁), a separable problem for one two-layer neuron
    let xs = [[0.9, 0.3], [0.5, -0.8], [0.2, 0.95], [-0.7, 0.4], [-0.3, -0.9], [-0.95, -0.1]];
    let inputs: Vec<f64> = xs.iter().flatten().copied().collect();
    let y: Vec<f64> = xs.iter().map(|x| x[0].signum()).collect();
    let data = Dataset::new(2, inputs, y.clone()).unwrap();
    let p = NcfProblem::new(NetworkModel::two_layer(0.0, 1, 2), data, y).unwrap();
    let w0 = WeightVector::new(p.model(), vec![0.5, 0.6, 0.3]).unwrap();
    let integ = IntegratorConfig::fixed(1e-3, Horizon::Time(10.0)).with_thinning(10, 10);
    let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
    let v = direction_verdict(&traj, 1e-4, 1e-12).unwrap();
    assert_eq!(v.outcome, Outcome::DirectionalLimit);
    let u = v.limit_direction.unwrap();
    let red = kkt_reduce_two_layer(u[0], &u[1..], &p).unwrap();
    assert!(red.passes(1e-5, 1e-5), "{red:?}");
    let r = kkt_residual(&p, &u, &KinkPolicy::default()).unwrap();
    assert!(r.residual <= 1e-5 && r.nonneg);
}

#[test]
fn verdict_limit_is_the_top_eigenvector() {
    let core = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2], vec![5.0, -4.0, 1.0]).unwrap();
    let data = core.mirrored_even();
    let y = data.labels().to_vec();
    let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), data, y).unwrap();
    let w0 = WeightVector::new(p.model(), vec![0.8, 0.3]).unwrap();
    assert!(p.value(w0.values()).unwrap() > 0.0);
    let integ = IntegratorConfig::fixed(1e-3, Horizon::Time(2.0));
    let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
    let v = direction_verdict(&traj, 1e-4, 1e-9).unwrap();
    assert_eq!(v.outcome, Outcome::DirectionalLimit);
    let u = v.limit_direction.unwrap();
    assert!((norm(&u) - 1.0).abs() < 1e-12);
    let top = top_eigvec_2x2(5.5, 0.5, -3.5);
    assert!(angle_between(&u, &top).min(angle_between(&u, &[-top[0], -top[1]])) < 1e-3);
    let r = kkt_residual(&p, &u, &KinkPolicy::default()).unwrap();
    assert!(r.residual <= 1e-6 && r.nonneg);
    assert!(v.eta_estimate.unwrap() > 0.0);
}

#[test]
fn negative_correlation_collapses_to_zero() {
    let data = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap().mirrored_even();
    let z = vec![-1.0; 4];
    let p = NcfProblem::new(NetworkModel::squared_relu(1, 2), data.clone(), z).unwrap();
    // N(θ) < 0 at every angle
    assert!((0..3600).all(|k| -n_theta(&data, k as f64 * PI / 1800.0) < 0.0));
    let w0 = WeightVector::new(p.model(), vec![0.6, -0.8]).unwrap();
    let integ = IntegratorConfig::fixed(1e-2, Horizon::Time(10.0));
    let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
    let v = direction_verdict(&traj, 1e-4, 1e-6).unwrap();
    assert_eq!(v.outcome, Outcome::ConvergedToZero);
    assert_eq!(v.eta_estimate, None);
}

#[test]
fn degenerate_problem_is_constant() {
    let data = fig1_dataset().unwrap();
    let p = NcfProblem::new(fig1_model(), data.clone(), vec![0.0; data.len()]).unwrap();
    let u0 = gaussian_init(p.model(), 1.0, 4);
    let w0 = WeightVector::new(p.model(), u0.clone()).unwrap();
    let integ = IntegratorConfig::fixed(1e-2, Horizon::Steps(300));
    let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
    assert!(traj.meta.degenerate);
    assert!(traj.snapshots().all(|(_, w)| w == u0.as_slice()));
    let v = direction_verdict(&traj, 1e-4, 1e-12).unwrap();
    assert_eq!(v.outcome, Outcome::DirectionalLimit);
    let n = norm(&u0);
    let dir = v.limit_direction.unwrap();
    assert!(dir.iter().zip(&u0).all(|(a, b)| (a - b / n).abs() < 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Ascent, Rayleigh monotonicity, the norm floor and, from a positive
    /// start, norm growth.
    #[test]
    fn flow_invariants(seed in 0u64..1000) {
        let data = fig1_dataset().unwrap();
        let y = data.labels().to_vec();
        let p = NcfProblem::new(fig1_model(), data, y).unwrap();
        let u0 = gaussian_init(p.model(), 1.0, seed);
        let w0 = WeightVector::new(p.model(), u0.clone()).unwrap();
        let integ = IntegratorConfig::fixed(1e-3, Horizon::Time(1.0));
        let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
        prop_assert_eq!(traj.stats.backsteps, 0);
        prop_assert_eq!(traj.stats.rayleigh_backsteps, 0);
        // |N(u)| ≤ ‖z‖·β‖u‖² with β ≤ ‖X‖_F² = n for unit inputs
        let beta = 50.0;
        let zn = norm(p.z());
        let n0 = norm(&u0);
        let positive = p.value(&u0).unwrap() >= 0.0;
        let mut prev = n0;
        for r in &traj.records {
            prop_assert!(r.norm_w.powi(2) >= n0 * n0 * (-4.0 * r.t * beta * zn).exp() / 2.0);
            if positive {
                prop_assert!(r.norm_w >= prev * (1.0 - 1e-12));
            }
            prev = r.norm_w;
        }
    }

    /// `v² − ‖u‖²` per neuron along a two-layer flow.
    #[test]
    fn two_layer_balance(alpha in prop_oneof![Just(0.0), Just(0.2)], seed in 0u64..1000) {
        let data = fig1_dataset().unwrap();
        // mean-reduced square loss, as in the figure presets
        let z: Vec<f64> = data.labels().iter().map(|y| y / data.len() as f64).collect();
        let model = NetworkModel::new(ModelKind::TwoLayerLeakyRelu { alpha, hidden: 3 }, 2).unwrap();
        let p = NcfProblem::new(model, data, z).unwrap();
        let u0 = gaussian_init(p.model(), 0.5, seed);
        let w0 = WeightVector::new(p.model(), u0.clone()).unwrap();
        let balance = |w: &[f64]| -> Vec<f64> {
            w.chunks(3).map(|b| b[0] * b[0] - b[1] * b[1] - b[2] * b[2]).collect()
        };
        let b0 = balance(&u0);
        let scale = 1.0 + norm(&u0).powi(2);
        let mut drift = 0.0f64;
        let integ = IntegratorConfig::fixed(1e-7, Horizon::Steps(100_000)).with_thinning(100_000, 100_000);
        ncf_flow_with_refs(&p, &w0, &integ, &KinkPolicy::default(), None, &mut |v| {
            for (a, b) in balance(v.w).iter().zip(&b0) {
                drift = drift.max((a - b).abs());
            }
        }).unwrap();
        prop_assert!(drift <= 1e-8 * scale, "drift {drift:e}");
    }
}
