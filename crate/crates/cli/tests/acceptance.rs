//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that this reproduction does not meet are reported as FAIL; the
//! binary still exits 0 so that the report is always printed in full. A panic
//! inside a check is a harness bug and fails the target.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ncf_core::experiments::data::{fig1_dataset, gaussian_init};
use ncf_core::flow::{Horizon, IntegratorConfig};
use ncf_core::models::{check_homogeneity, euler_residual, DenseLayer};
use ncf_core::ncf::{
    analytic_kkt_sym_relu, analytic_kkt_sym_sqrelu, direction_verdict, kkt_reduce_two_layer, kkt_residual,
    ncf_flow, ncf_flow_with_refs, Outcome as Verdict,
};
use ncf_core::rng;
use ncf_core::{Dataset, KinkPolicy, ModelKind, NcfProblem, NetworkModel, WeightVector};
use ncf_flow::config::{Axis, RunConfig};
use ncf_flow::experiment::{execute, Outcome};

const PRESETS: [&str; 8] = [
    "fig1",
    "fig1_random",
    "fig3",
    "saddle_appD",
    "toy_u1u2",
    "escape_g",
    "thm1_sweep",
    "leaky_nonbranch",
];

struct Ran {
    name: &'static str,
    config: RunConfig,
    outcome: Outcome,
    elapsed: Duration,
}

fn preset_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(format!("{name}.json"))
}

fn load(name: &str) -> RunConfig {
    RunConfig::load(&preset_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run_preset(name: &'static str) -> Ran {
    let config = load(name);
    let start = Instant::now();
    let outcome = execute(&config).unwrap_or_else(|e| panic!("{name}: {e}"));
    Ran {
        name,
        config,
        outcome,
        elapsed: start.elapsed(),
    }
}

fn metric(o: &Outcome, key: &str) -> f64 {
    o.summary.iter().find(|(k, _)| k == key).map_or(f64::NAN, |x| x.1)
}

fn get<'a>(runs: &'a [Ran], name: &str) -> &'a Ran {
    runs.iter().find(|r| r.name == name).expect("preset ran")
}

fn failures(r: &Ran) -> String {
    if r.outcome.failures.is_empty() {
        "no failed checks".into()
    } else {
        r.outcome.failures.join("; ")
    }
}

fn ac1(runs: &[Ran]) -> (bool, String) {
    let r = get(runs, "fig1");
    let ok = r.outcome.passed() && r.elapsed.as_secs_f64() < 30.0;
    (
        ok,
        format!(
            "{:.2}s, rel loss change {:.2e}, max neuron norm {:.3e}, aligned {:.2}: {}",
            r.elapsed.as_secs_f64(),
            metric(&r.outcome, "rel_loss_change"),
            metric(&r.outcome, "max_neuron_norm"),
            metric(&r.outcome, "aligned_fraction"),
            failures(r)
        ),
    )
}

fn ac2(runs: &[Ran]) -> (bool, String) {
    let r = get(runs, "saddle_appD");
    let ok = r.outcome.passed() && r.elapsed.as_secs_f64() < 30.0;
    (
        ok,
        format!(
            "{:.2}s, max distance to saddle {:.3e}, aligned {:.2}: {}",
            r.elapsed.as_secs_f64(),
            metric(&r.outcome, "max_dist_to_saddle"),
            metric(&r.outcome, "aligned_fraction"),
            failures(r)
        ),
    )
}

fn ac3(runs: &[Ran]) -> (bool, String) {
    let r = get(runs, "thm1_sweep");
    let rows = r.outcome.report["rows"].as_array().cloned().unwrap_or_default();
    let mut pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|x| (x["delta"].as_f64().unwrap(), x["sup_dev"].as_f64().unwrap()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let deltas: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let strict = pairs.windows(2).all(|w| w[1].1 < w[0].1);
    let last = pairs.last().map_or(f64::NAN, |p| p.1);
    let ok = deltas == [1e-2, 1e-3, 1e-4] && strict && last < 0.05 && r.elapsed.as_secs_f64() < 60.0;
    let devs: Vec<String> = pairs.iter().map(|p| format!("{:.2e}", p.1)).collect();
    (ok, format!("{:.2}s, sup_dev [{}]", r.elapsed.as_secs_f64(), devs.join(", ")))
}

fn ac4(runs: &[Ran]) -> (bool, String) {
    let mut excess: Vec<(String, f64)> = ["fig1", "fig1_random", "thm1_sweep"]
        .iter()
        .map(|&p| (p.to_string(), metric(&get(runs, p).outcome, "envelope_excess")))
        .collect();
    let cfg = load("fig1");
    for seed in 1..5 {
        let o = execute(&cfg.with_axis(Axis::Seed, seed as f64).unwrap()).unwrap();
        excess.push((format!("fig1 seed {seed}"), metric(&o, "envelope_excess")));
    }
    let worst = excess.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let bad: Vec<String> = excess
        .iter()
        .filter(|e| !(e.1 <= 1e-10))
        .map(|(n, e)| format!("{n}: {e:e}"))
        .collect();
    let mut detail = format!("{} runs, largest excess {worst:.3e}", excess.len());
    if !bad.is_empty() {
        detail += &format!(" ({})", bad.join(", "));
    }
    (bad.is_empty(), detail)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Homogeneity and Euler identity on random points, a fifth of the
/// coordinates zeroed so that kinks are hit exactly.
fn ac5() -> (bool, String) {
    const D: usize = 3;
    let mut worst_h = 0.0f64;
    let mut worst_e = 0.0f64;
    let mut fails = 0;
    let mut cases = 0;
    for arch in 0..4 {
        let mut r = rng::stream(2024, arch);
        for i in 0..1000 {
            let g = rng::gaussian_vec(&mut r, 40, 1.0);
            let alpha = match i % 4 {
                0 => 0.0,
                1 => 1.0,
                2 => -1.0,
                _ => g[0].tanh(),
            };
            let mask = |v: &[f64], off: usize| -> Vec<f64> {
                v.iter()
                    .enumerate()
                    .map(|(k, &a)| if g[(off + k) % 40] < -0.8416 { 0.0 } else { 1.5 * a })
                    .collect()
            };
            let x = mask(&rng::gaussian_vec(&mut r, D, 1.0), 3);
            let c = 5.0 * (1.0 + g[1].tanh());
            let (model, mut extra) = match arch {
                0 => (NetworkModel::two_layer(alpha, 1 + i % 4, D), 1.0),
                1 => {
                    let signs = (0..1 + i % 4).map(|k| if g[2 + k] > 0.0 { 1.0 } else { -1.0 }).collect();
                    (NetworkModel::new(ModelKind::SquaredRelu { alpha, signs }, D).unwrap(), 1.0)
                }
                2 => (
                    NetworkModel::new(ModelKind::DiagonalTwoHomogeneous { alpha, degree: 2 }, D).unwrap(),
                    1.0,
                ),
                _ => {
                    let frozen = g[10..14].to_vec();
                    let output = g[14..16].to_vec();
                    let gain = (1.0 + norm(&frozen)) * (1.0 + norm(&output));
                    let kind = ModelKind::FixedOuterDeepRelu {
                        alpha,
                        first: 3,
                        second: 2,
                        frozen: vec![DenseLayer::new(2, 2, frozen).unwrap()],
                        output,
                    };
                    (NetworkModel::new(kind, D).unwrap(), gain)
                }
            };
            let w = mask(&rng::gaussian_vec(&mut r, model.param_dim(), 1.0), 17);
            let a = 1f64.max(alpha.abs());
            extra *= (1.0 + c * c) * a * a * (1.0 + (norm(&w) * (1.0 + norm(&x))).powi(2));
            let h = check_homogeneity(&model, &x, &w, c).unwrap() / extra;
            worst_h = worst_h.max(h);
            let mut bad = h > 1e-12;
            for v in [alpha.min(1.0), 0.5 * (alpha.min(1.0) + alpha.max(1.0)), alpha.max(1.0)] {
                let e = euler_residual(&model, &x, &w, &KinkPolicy::with_value(v)).unwrap() / extra;
                worst_e = worst_e.max(e);
                bad |= e > 1e-10;
            }
            fails += bad as usize;
            cases += 1;
        }
    }
    (
        fails == 0,
        format!("{cases} cases, {fails} failures, worst scaled homogeneity {worst_h:.2e}, euler {worst_e:.2e}"),
    )
}

fn ac6() -> (bool, String) {
    let mut worst = 0.0f64;
    let mut worst_v = 0.0f64;
    // sym squared-ReLU: eigenvectors of M
    let core = Dataset::new(2, vec![1.0, 0.0, 0.0, 1.0], vec![5.0, -4.0]).unwrap();
    for alpha in [0.0, 0.3] {
        let o = analytic_kkt_sym_sqrelu(&core.mirrored_even(), alpha).unwrap();
        worst = o.reports.iter().map(|r| r.residual).fold(worst, f64::max);
    }
    let fig1 = fig1_dataset().unwrap();
    let half: Vec<usize> = (0..fig1.len()).filter(|&i| fig1.x(i)[0] > 1e-12).collect();
    let inputs: Vec<f64> = half.iter().flat_map(|&i| fig1.x(i).to_vec()).collect();
    let labels: Vec<f64> = half.iter().map(|&i| fig1.labels()[i]).collect();
    let o = analytic_kkt_sym_sqrelu(&Dataset::new(2, inputs, labels).unwrap().mirrored_even(), 0.0).unwrap();
    worst = o.reports.iter().map(|r| r.residual).fold(worst, f64::max);

    // sym ReLU: (±1/√2, ±q/(√2‖q‖)) and the reduction of each output
    let mut r = rng::stream(6, 0);
    let cores = [
        Dataset::new(2, vec![1.0, 0.0], vec![1.0]).unwrap(),
        Dataset::new(3, rng::gaussian_vec(&mut r, 12, 1.0), rng::gaussian_vec(&mut r, 4, 1.0)).unwrap(),
    ];
    for c in &cores {
        for alpha in [0.0, 0.2] {
            let data = c.mirrored();
            let o = analytic_kkt_sym_relu(&data, alpha).unwrap();
            let p = NcfProblem::new(NetworkModel::two_layer(alpha, 1, data.dim()), data.clone(), data.labels().to_vec())
                .unwrap();
            for rep in &o.reports {
                worst = worst.max(rep.residual);
                let red = kkt_reduce_two_layer(rep.u[0], &rep.u[1..], &p).unwrap();
                worst_v = worst_v.max(red.v_deviation);
            }
        }
    }

    // a KKT point found by the flow
    let xs = [[0.9, 0.3], [0.5, -0.8], [0.2, 0.95], [-0.7, 0.4], [-0.3, -0.9], [-0.95, -0.1]];
    let inputs: Vec<f64> = xs.iter().flatten().copied().collect();
    let y: Vec<f64> = xs.iter().map(|x| x[0].signum()).collect();
    let p = NcfProblem::new(NetworkModel::two_layer(0.0, 1, 2), Dataset::new(2, inputs, y.clone()).unwrap(), y)
        .unwrap();
    let w0 = WeightVector::new(p.model(), vec![0.5, 0.6, 0.3]).unwrap();
    let integ = IntegratorConfig::fixed(1e-3, Horizon::Time(10.0)).with_thinning(10, 10);
    let traj = ncf_flow(&p, &w0, &integ, &KinkPolicy::default()).unwrap();
    let v = direction_verdict(&traj, 1e-4, 1e-12).unwrap();
    let (flow_v, flow_ok) = match (&v.outcome, &v.limit_direction) {
        (Verdict::DirectionalLimit, Some(u)) => {
            let red = kkt_reduce_two_layer(u[0], &u[1..], &p).unwrap();
            let res = kkt_residual(&p, u, &KinkPolicy::default()).unwrap();
            (red.v_deviation, red.passes(1e-5, 1e-5) && res.nonneg)
        }
        _ => (f64::NAN, false),
    };
    let ok = worst <= 1e-8 && worst_v <= 1e-10 && flow_ok && flow_v <= 1e-5;
    (
        ok,
        format!("oracle residual {worst:.2e}, oracle |v| deviation {worst_v:.2e}, flow |v| deviation {flow_v:.2e}"),
    )
}

fn ac7(runs: &[Ran]) -> (bool, String) {
    let r = get(runs, "escape_g");
    let rows = r.outcome.report["rows"].as_array().cloned().unwrap_or_default();
    let mut ds = Vec::new();
    let mut ok = rows.len() == 3;
    for row in &rows {
        let d = row["distance"].as_f64().unwrap();
        ok &= d >= 0.09 - 1e-3;
        ds.push(format!("δ={}: {d:.4}", row["delta"]));
    }
    (ok && r.outcome.passed(), ds.join(", "))
}

fn ac8(runs: &[Ran]) -> (bool, String) {
    let toy = get(runs, "toy_u1u2");
    let leaky = get(runs, "leaky_nonbranch");
    let cases = toy.outcome.report["cases"].as_array().cloned().unwrap_or_default();
    let stationary = cases.first().is_some_and(|c| c["stationary"] == serde_json::json!(true));
    // two-layer balance on the figure data
    let data = fig1_dataset().unwrap();
    let z: Vec<f64> = data.labels().iter().map(|y| y / data.len() as f64).collect();
    let mut worst = 0.0f64;
    for (k, alpha) in [0.0, 0.2, 0.0, 0.2].into_iter().enumerate() {
        let model = NetworkModel::new(ModelKind::TwoLayerLeakyRelu { alpha, hidden: 3 }, 2).unwrap();
        let p = NcfProblem::new(model, data.clone(), z.clone()).unwrap();
        let u0 = gaussian_init(p.model(), 0.5, k as u64);
        let w0 = WeightVector::new(p.model(), u0.clone()).unwrap();
        let balance = |w: &[f64]| -> Vec<f64> { w.chunks(3).map(|b| b[0] * b[0] - b[1] * b[1] - b[2] * b[2]).collect() };
        let b0 = balance(&u0);
        let integ = IntegratorConfig::fixed(1e-7, Horizon::Steps(100_000)).with_thinning(100_000, 100_000);
        let mut drift = 0.0f64;
        ncf_flow_with_refs(&p, &w0, &integ, &KinkPolicy::default(), None, &mut |v| {
            for (a, b) in balance(v.w).iter().zip(&b0) {
                drift = drift.max((a - b).abs());
            }
        })
        .unwrap();
        worst = worst.max(drift);
    }
    let ok = toy.outcome.passed() && leaky.outcome.passed() && stationary && worst <= 1e-8;
    (
        ok,
        format!(
            "toy drift {:.2e}, [1,0] stationary {stationary}, leaky drift {:.2e} with signs kept, two-layer drift {worst:.2e}",
            metric(&toy.outcome, "max_conservation_drift"),
            metric(&leaky.outcome, "max_conservation_drift"),
        ),
    )
}

fn ac9(runs: &[Ran]) -> (bool, String) {
    let mut n = 0;
    let mut bad = Vec::new();
    for r in runs {
        for t in r.outcome.runs.iter().filter(|t| t.meta.coordinates == "u") {
            n += 1;
            if t.stats.backsteps != 0 || t.stats.rayleigh_backsteps != 0 {
                bad.push(format!(
                    "{} / {}: {} N and {} Rayleigh drops",
                    r.name, t.meta.label, t.stats.backsteps, t.stats.rayleigh_backsteps
                ));
            }
        }
    }
    let ok = bad.is_empty() && n > 0;
    (ok, if bad.is_empty() { format!("{n} NCF runs, no drops") } else { bad.join("; ") })
}

fn ac10(runs: &[Ran]) -> (bool, String) {
    let mut bad = Vec::new();
    let mut files = 0;
    for r in runs {
        let again = execute(&r.config).unwrap();
        let a: Vec<String> = r.outcome.runs.iter().map(|t| t.to_csv_string()).collect();
        let b: Vec<String> = again.runs.iter().map(|t| t.to_csv_string()).collect();
        files += a.len();
        if a != b {
            bad.push(r.name);
        }
    }
    (
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} presets, {files} CSVs identical", runs.len())
        } else {
            format!("differs: {}", bad.join(", "))
        },
    )
}

fn main() {
    // cargo passes harness flags; a filter that excludes this target skips it
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    let runs: Vec<Ran> = PRESETS.iter().map(|&p| run_preset(p)).collect();
    let results = [
        ("AC1", "fig1 reproduction", ac1(&runs)),
        ("AC2", "saddle reproduction", ac2(&runs)),
        ("AC3", "approximation trend", ac3(&runs)),
        ("AC4", "norm-growth envelope", ac4(&runs)),
        ("AC5", "Euler/homogeneity suite", ac5()),
        ("AC6", "analytic KKT oracles", ac6()),
        ("AC7", "escape from the kink", ac7(&runs)),
        ("AC8", "conservation laws", ac8(&runs)),
        ("AC9", "NCF monotonicity", ac9(&runs)),
        ("AC10", "determinism", ac10(&runs)),
    ];
    let mut passed = 0;
    for (id, what, (ok, detail)) in &results {
        passed += *ok as usize;
        println!("{id} {} {what}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    println!("{passed}/{} criteria pass", results.len());
}
