//! Randomized homogeneity, Euler-identity and subgradient-scaling checks,
//! 1000 cases per architecture, including points sitting exactly on kinks.

use ncf_core::models::{check_homogeneity, euler_residual, subgrad_scaling_residual};
use ncf_core::models::DenseLayer;
use ncf_core::{KinkPolicy, ModelKind, NetworkModel};
use proptest::prelude::*;

const D: usize = 3;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Zeroes the entries selected by `mask` so that pre-activations can land on
/// the kink exactly.
fn masked(v: Vec<f64>, mask: &[bool]) -> Vec<f64> {
    v.into_iter()
        .zip(mask.iter().cycle())
        .map(|(a, &m)| if m { 0.0 } else { a })
        .collect()
}

fn deep_model(alpha: f64, frozen: Vec<f64>, output: Vec<f64>) -> NetworkModel {
    NetworkModel::new(
        ModelKind::FixedOuterDeepRelu {
            alpha,
            first: 3,
            second: 2,
            frozen: vec![DenseLayer::new(2, 2, frozen).unwrap()],
            output,
        },
        D,
    )
    .unwrap()
}

/// Size of the terms that enter `H`, used to scale the tolerances. `k_extra`
/// absorbs frozen-layer gains.
fn scale(alpha: f64, w: &[f64], x: &[f64], c: f64, k_extra: f64) -> f64 {
    let a = 1f64.max(alpha.abs());
    (1.0 + c * c) * a * a * (1.0 + (norm(w) * (1.0 + norm(x))).powi(2)) * k_extra
}

fn check_all(model: &NetworkModel, x: &[f64], w: &[f64], c: f64, k_extra: f64) {
    let s = scale(model.alpha(), w, x, c, k_extra);
    let hom = check_homogeneity(model, x, w, c).unwrap();
    assert!(hom <= 1e-12 * s, "homogeneity {hom:e} > 1e-12·{s:e}");
    let a = model.alpha();
    let lo = a.min(1.0);
    let hi = a.max(1.0);
    for v in [lo, 0.5 * (lo + hi), hi] {
        let policy = KinkPolicy::with_value(v);
        let e = euler_residual(model, x, w, &policy).unwrap();
        assert!(e <= 1e-10 * s, "euler {e:e} > 1e-10·{s:e} (σ'(0) = {v})");
        let g = subgrad_scaling_residual(model, x, w, c, &policy).unwrap();
        assert!(g <= 1e-12 * s, "subgrad scaling {g:e} > 1e-12·{s:e}");
    }
}

fn coords(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

fn mask(n: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(prop::bool::weighted(0.2), n)
}

fn alpha() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), Just(-1.0), -1.0f64..1.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn two_layer(alpha in alpha(), hidden in 1usize..5, seed_w in coords(5 * (D + 1)),
                 m in mask(8), x in coords(D), c in 0.0f64..10.0) {
        let model = NetworkModel::two_layer(alpha, hidden, D);
        let w = masked(seed_w[..model.param_dim()].to_vec(), &m);
        check_all(&model, &masked(x, &m[5..]), &w, c, 1.0);
    }

    #[test]
    fn squared_relu(alpha in alpha(), signs in prop::collection::vec(prop::bool::ANY, 1..5),
                    seed_w in coords(4 * D), m in mask(7), x in coords(D), c in 0.0f64..10.0) {
        let signs: Vec<f64> = signs.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        let model = NetworkModel::new(ModelKind::SquaredRelu { alpha, signs }, D).unwrap();
        let w = masked(seed_w[..model.param_dim()].to_vec(), &m);
        check_all(&model, &masked(x, &m[4..]), &w, c, 1.0);
    }

    #[test]
    fn diagonal(alpha in alpha(), w in coords(2 * D), m in mask(6), x in coords(D),
                c in 0.0f64..10.0) {
        let model = NetworkModel::new(
            ModelKind::DiagonalTwoHomogeneous { alpha, degree: 2 }, D).unwrap();
        check_all(&model, &masked(x, &m[3..]), &masked(w, &m), c, 1.0);
    }

    #[test]
    fn fixed_outer_deep(alpha in alpha(), w in coords(3 * D + 6), frozen in coords(4),
                        output in coords(2), m in mask(9), x in coords(D), c in 0.0f64..10.0) {
        let gain = (1.0 + norm(&frozen)) * (1.0 + norm(&output));
        let model = deep_model(alpha, frozen, output);
        check_all(&model, &masked(x, &m[6..]), &masked(w, &m), c, gain);
    }
}

#[test]
fn trivial_scales() {
    let model = NetworkModel::squared_relu(2, 2);
    let w = [0.3, -1.2, 0.7, 0.4];
    let x = [0.6, 0.8];
    assert_eq!(check_homogeneity(&model, &x, &w, 1.0).unwrap(), 0.0);
    assert_eq!(check_homogeneity(&model, &x, &w, 0.0).unwrap(), 0.0);
    assert!(check_homogeneity(&model, &x, &w, -1.0).is_err());
    // on the kink both sides of the Euler identity vanish
    let on_kink = NetworkModel::squared_relu(1, 2);
    let r = euler_residual(&on_kink, &[1.0, 0.0], &[0.0, 1.0], &KinkPolicy::default()).unwrap();
    assert_eq!(r, 0.0);
}
