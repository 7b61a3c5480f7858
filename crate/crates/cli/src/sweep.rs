//! The `sweep` command: one bundle per axis value plus a summary table.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::json;

use crate::config::{Axis, RunConfig};
use crate::experiment::{execute, Outcome};
use crate::output::{report_status, write_bundle};
use crate::{CliError, EXIT_FAILED, EXIT_OK};

pub struct SweepPoint {
    pub value: f64,
    pub config: RunConfig,
    pub outcome: Outcome,
}

fn point_dir(i: usize, axis: Axis, v: f64) -> String {
    format!("{i:03}-{}={v:e}", axis.name())
}

/// Deviation should shrink with the perturbation: walking from the largest
/// value down, `sup_dev` may not grow.
pub fn trend_failures(axis: Axis, points: &[SweepPoint]) -> Vec<String> {
    if axis == Axis::Seed {
        return Vec::new();
    }
    let mut rows: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| {
            p.outcome
                .summary
                .iter()
                .find(|(k, _)| k == "sup_dev")
                .map(|&(_, d)| (p.value, d))
        })
        .collect();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    rows.windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .map(|w| {
            format!(
                "sup_dev grows from {:e} at {} = {:e} to {:e} at {:e}",
                w[0].1,
                axis.name(),
                w[0].0,
                w[1].1,
                w[1].0
            )
        })
        .collect()
}

pub fn run_sweep(cfg: &RunConfig) -> Result<(Axis, Vec<SweepPoint>), CliError> {
    let spec = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no sweep block".into()))?;
    if spec.values.is_empty() {
        return Err(CliError::Config("sweep values are empty".into()));
    }
    let configs = spec
        .values
        .iter()
        .map(|&v| cfg.with_axis(spec.axis, v).map(|c| (v, c)))
        .collect::<Result<Vec<_>, _>>()?;
    let points = configs
        .into_par_iter()
        .map(|(value, config)| {
            execute(&config).map(|outcome| SweepPoint {
                value,
                config,
                outcome,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((spec.axis, points))
}

pub fn summary_csv(axis: Axis, points: &[SweepPoint]) -> String {
    let keys: BTreeSet<&str> = points
        .iter()
        .flat_map(|p| p.outcome.summary.iter().map(|(k, _)| k.as_str()))
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index", "axis", "value", "status"];
    header.extend(keys.iter().copied());
    w.write_record(&header).expect("in-memory write");
    for (i, p) in points.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            axis.name().to_string(),
            format!("{:e}", p.value),
            if p.outcome.passed() { "passed" } else { "failed" }.to_string(),
        ];
        for k in &keys {
            let v = p.outcome.summary.iter().find(|(n, _)| n == k).map(|x| x.1);
            row.push(v.map_or(String::new(), |v| format!("{v:e}")));
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn sweep_command(path: &Path, out: &Path, stamp: bool) -> Result<i32, CliError> {
    let cfg = RunConfig::load(path)?;
    let (axis, points) = run_sweep(&cfg)?;
    let trend = trend_failures(axis, &points);
    let root = out.join(cfg.dir_name());
    let pdir = root.join("points");
    for (i, p) in points.iter().enumerate() {
        let dir = pdir.join(point_dir(i, axis, p.value));
        write_bundle(&dir, &p.config, &p.outcome, stamp)?;
        report_status(&format!("{} {}={:e}", cfg.name, axis.name(), p.value), &dir, &p.outcome);
    }
    fs::write(root.join("summary.csv"), summary_csv(axis, &points))?;
    let failed_points: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.outcome.passed())
        .map(|(i, _)| i)
        .collect();
    let passed = failed_points.is_empty() && trend.is_empty();
    let doc = json!({
        "name": cfg.name,
        "config_hash": cfg.hash(),
        "axis": axis.name(),
        "values": points.iter().map(|p| p.value).collect::<Vec<_>>(),
        "failed_points": failed_points,
        "trend_failures": trend,
        "passed": passed,
        "config": cfg,
    });
    fs::write(
        root.join("sweep.json"),
        serde_json::to_string_pretty(&doc).expect("serializes") + "\n",
    )?;
    let failed = root.join("FAILED");
    if passed {
        if failed.exists() {
            fs::remove_file(failed)?;
        }
    } else {
        let mut lines: Vec<String> = failed_points.iter().map(|i| format!("point {i} failed")).collect();
        lines.extend(trend.iter().cloned());
        fs::write(failed, lines.join("\n") + "\n")?;
    }
    for t in &trend {
        println!("  {t}");
    }
    println!("{}: sweep {}, results in {}", cfg.name, if passed { "passed" } else { "FAILED" }, root.display());
    Ok(if passed { EXIT_OK } else { EXIT_FAILED })
}
