//! Result bundles: report, trajectory CSVs and two SVG figures per run.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use ncf_core::ncf::theta_grid_kkt;
use ncf_core::{linalg, NcfProblem, Trajectory};

use crate::config::RunConfig;
use crate::experiment::{execute, Outcome};
use crate::plot::{render, Panel, Rect, Series};
use crate::{CliError, EXIT_FAILED, EXIT_OK};

const GRID: usize = 3600;

pub fn run_command(path: &Path, out: &Path, seed: Option<u64>, stamp: bool) -> Result<i32, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.sweep.is_some() {
        log::info!("ignoring the sweep block; use the sweep command to run it");
    }
    let outcome = execute(&cfg)?;
    let dir = out.join(cfg.dir_name());
    write_bundle(&dir, &cfg, &outcome, stamp)?;
    report_status(&cfg.name, &dir, &outcome);
    Ok(if outcome.passed() { EXIT_OK } else { EXIT_FAILED })
}

pub fn report_status(name: &str, dir: &Path, outcome: &Outcome) {
    if outcome.passed() {
        println!("{name}: passed, results in {}", dir.display());
    } else {
        println!("{name}: FAILED, results in {}", dir.display());
        for f in &outcome.failures {
            println!("  {f}");
        }
    }
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn csv_name(i: usize) -> String {
    if i == 0 {
        "trajectory.csv".into()
    } else {
        format!("trajectory-{i}.csv")
    }
}

pub fn report_json(cfg: &RunConfig, o: &Outcome) -> Value {
    let summary: serde_json::Map<String, Value> = o
        .summary
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    let runs: Vec<Value> = o
        .runs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({ "file": csv_name(i), "meta": t.meta, "stats": t.stats }))
        .collect();
    json!({
        "name": cfg.name,
        "experiment": cfg.experiment.kind(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "passed": o.passed(),
        "failures": o.failures,
        "summary": summary,
        "report": o.report,
        "runs": runs,
        "config": cfg,
    })
}

/// Writes the bundle into `dir`, replacing files from an earlier run.
pub fn write_bundle(dir: &Path, cfg: &RunConfig, o: &Outcome, stamp: bool) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    let report = serde_json::to_string_pretty(&report_json(cfg, o)).expect("report serializes");
    fs::write(dir.join("report.json"), report + "\n")?;
    for (i, t) in o.runs.iter().enumerate() {
        fs::write(dir.join(csv_name(i)), t.to_csv_string())?;
    }
    if o.runs.is_empty() {
        fs::write(dir.join(csv_name(0)), Trajectory::csv_header(0) + "\n")?;
    }
    let stamp = stamp.then(unix_time);
    fs::write(dir.join("loss_norm.svg"), loss_norm_svg(o, stamp))?;
    fs::write(dir.join("angles_ncf.svg"), angles_svg(o, stamp))?;
    let failed = dir.join("FAILED");
    if o.passed() {
        if failed.exists() {
            fs::remove_file(failed)?;
        }
    } else {
        fs::write(failed, o.failures.join("\n") + "\n")?;
    }
    Ok(dir.to_path_buf())
}

fn loss_norm_svg(o: &Outcome, stamp: Option<u64>) -> String {
    let legend = o.runs.len() > 1 && o.runs.len() <= 10;
    let series = |f: &dyn Fn(&ncf_core::Record) -> f64| -> Vec<Series> {
        o.runs
            .iter()
            .map(|t| Series::new(&t.meta.label, t.records.iter().map(|r| (r.t, f(r))).collect()))
            .collect()
    };
    let ncf_coords = o.runs.first().is_some_and(|t| t.meta.coordinates == "u");
    let left = Panel {
        title: if ncf_coords { "correlation".into() } else { "loss".into() },
        x_label: "t".into(),
        y_label: if ncf_coords { "N(u)".into() } else { "L".into() },
        series: series(&|r| r.loss),
        legend,
        ..Default::default()
    };
    let right = Panel {
        title: "parameter norm".into(),
        x_label: "t".into(),
        y_label: "|w|".into(),
        series: series(&|r| r.norm_w),
        log_y: true,
        ..Default::default()
    };
    render(
        900.0,
        360.0,
        &[
            (Rect { x: 0.0, y: 0.0, w: 450.0, h: 360.0 }, left),
            (Rect { x: 450.0, y: 0.0, w: 450.0, h: 360.0 }, right),
        ],
        stamp,
    )
}

fn wrap_deg(theta: f64) -> f64 {
    let d = theta.to_degrees();
    if d >= 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Block angles over time: the polar angle for 2-parameter blocks, the angle
/// to the final direction otherwise.
fn angle_series(t: &Trajectory, blocks: &[(usize, usize, usize)]) -> Vec<Series> {
    let snaps: Vec<(f64, &[f64])> = t.snapshots().map(|(r, w)| (r.t, w)).collect();
    let Some(&(_, last)) = snaps.last() else {
        return Vec::new();
    };
    blocks
        .iter()
        .filter(|&&(_, off, len)| off + len <= last.len())
        .map(|&(b, off, len)| {
            let end = &last[off..off + len];
            let pts = snaps
                .iter()
                .filter_map(|&(time, w)| {
                    let v = &w[off..off + len];
                    let a = if len == 2 {
                        if v[0] == 0.0 && v[1] == 0.0 {
                            f64::NAN
                        } else {
                            wrap_deg(v[1].atan2(v[0]).rem_euclid(2.0 * PI))
                        }
                    } else {
                        let c = linalg::dot(v, end) / (linalg::norm(v) * linalg::norm(end));
                        c.clamp(-1.0, 1.0).acos().to_degrees()
                    };
                    a.is_finite().then_some((time, a))
                })
                .collect();
            Series::new(format!("block {b}"), pts)
        })
        .collect()
}

fn curve_panel(p: &NcfProblem) -> Panel {
    let n = 720;
    let pts: Vec<(f64, f64)> = (0..=n)
        .map(|i| {
            let th = -PI + 2.0 * PI * i as f64 / n as f64;
            (p.value(&[th.cos(), th.sin()]).unwrap_or(f64::NAN), th.to_degrees())
        })
        .collect();
    let hlines = theta_grid_kkt(p, GRID)
        .map(|g| g.points.iter().map(|k| wrap_deg(k.theta)).collect())
        .unwrap_or_default();
    Panel {
        title: "N on the unit circle".into(),
        x_label: "N(cos θ, sin θ)".into(),
        y_label: "θ (degrees)".into(),
        series: vec![Series::new("N", pts)],
        hlines,
        y_range: Some((-180.0, 180.0)),
        ..Default::default()
    }
}

fn angles_svg(o: &Outcome, stamp: Option<u64>) -> String {
    let v = &o.angles;
    let series = o
        .runs
        .get(v.run)
        .map(|t| angle_series(t, &v.blocks))
        .unwrap_or_default();
    let polar = v.blocks.iter().all(|b| b.2 == 2);
    let left = Panel {
        title: "block directions".into(),
        x_label: "t".into(),
        y_label: if polar { "θ (degrees)".into() } else { "angle to final direction (degrees)".into() },
        legend: series.len() <= 10,
        series,
        y_range: polar.then_some((-180.0, 180.0)),
        ..Default::default()
    };
    let mut panels = vec![(Rect { x: 0.0, y: 0.0, w: 540.0, h: 400.0 }, left)];
    if let Some(p) = &v.curve {
        panels.push((Rect { x: 540.0, y: 0.0, w: 360.0, h: 400.0 }, curve_panel(p)));
    }
    render(900.0, 400.0, &panels, stamp)
}
