//! The JSON run configuration shared by `run`, `kkt` and `sweep`.
//!
//! Parsing is strict: every struct rejects unknown keys, and
//! [`RunConfig::validate`] checks the semantic constraints before anything
//! is computed or written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ncf_core::experiments::{data, SaddleConfig, SepConfig, Thm1Config};
use ncf_core::flow::{IntegratorConfig, Loss};
use ncf_core::ncf::VerdictConfig;
use ncf_core::trajectory::content_hash;
use ncf_core::{Dataset, KinkPolicy, ModelKind, NetworkModel};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Preset name; prefixes the output directory.
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub loss: Option<Loss>,
    #[serde(default)]
    pub policy: KinkPolicy,
    pub experiment: Experiment,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub architecture: ModelKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mirror {
    /// Append `(−x, −y)` for every sample.
    Odd,
    /// Append `(−x, y)` for every sample.
    Even,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Unit inputs on the circle labelled by `5·max(0, x₁)² + 4·max(0, −x₁)²`.
    /// Evenly spaced unless `random_seed` is given.
    Fig1 {
        #[serde(default = "fifty")]
        n: usize,
        #[serde(default)]
        random_seed: Option<u64>,
    },
    /// One row per sample.
    Inline {
        inputs: Vec<Vec<f64>>,
        labels: Vec<f64>,
        #[serde(default)]
        mirror: Option<Mirror>,
    },
    /// Header row, then `x₁,…,x_d,y` per line. Relative paths resolve
    /// against the config file.
    Csv {
        path: PathBuf,
        #[serde(default)]
        unit_norm: bool,
    },
}

fn fifty() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainChecks {
    #[serde(default)]
    pub max_rel_loss_change: Option<f64>,
    #[serde(default)]
    pub max_neuron_norm: Option<f64>,
    #[serde(default)]
    pub min_aligned_fraction: Option<f64>,
    /// Largest allowed `‖w(t)‖² − δ²e^{4ββ̃t}`.
    #[serde(default = "envelope_tol")]
    pub max_envelope_excess: f64,
    /// Fraction of steps allowed to raise the loss.
    #[serde(default = "backstep_fraction")]
    pub max_backstep_fraction: f64,
}

impl Default for TrainChecks {
    fn default() -> Self {
        TrainChecks {
            max_rel_loss_change: None,
            max_neuron_norm: None,
            min_aligned_fraction: None,
            max_envelope_excess: envelope_tol(),
            max_backstep_fraction: backstep_fraction(),
        }
    }
}

fn envelope_tol() -> f64 {
    1e-10
}

fn backstep_fraction() -> f64 {
    1e-3
}

fn default_init_std() -> f64 {
    1e-5
}

fn default_beta_samples() -> usize {
    20_000
}

fn tol_kkt() -> f64 {
    ncf_core::ncf::TOL_KKT
}

fn tol_conservation() -> f64 {
    1e-8
}

fn tol_closed_form() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyCase {
    pub u0: [f64; 2],
    #[serde(default)]
    pub policy: Option<KinkPolicy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub n_perturb: usize,
    pub rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Training flow from `δ·w₀` with a Gaussian `w₀`.
    Train {
        integrator: IntegratorConfig,
        #[serde(default = "default_init_std")]
        init_std: f64,
        #[serde(default)]
        sep: SepConfig,
        #[serde(default)]
        checks: TrainChecks,
        #[serde(default = "default_beta_samples")]
        beta_samples: usize,
    },
    /// Positive flow of the correlation function `z = −ℓ′(0, y)`.
    Ncf {
        integrator: IntegratorConfig,
        /// Unit Gaussian start when absent.
        #[serde(default)]
        u0: Option<Vec<f64>>,
        #[serde(default)]
        sep: SepConfig,
        #[serde(default)]
        verdict: VerdictConfig,
        #[serde(default = "tol_kkt")]
        tol_kkt: f64,
        #[serde(default)]
        min_aligned_fraction: Option<f64>,
        /// Forcing levels for the perturbation study; none runs no study.
        #[serde(default)]
        forcing: Vec<f64>,
    },
    Thm1 {
        harness: Thm1Config,
        /// Largest allowed deviation at the smallest `δ`.
        #[serde(default)]
        max_sup_dev: Option<f64>,
    },
    Saddle {
        harness: SaddleConfig,
        nonzero_blocks: Vec<usize>,
        w_bar_n: Vec<f64>,
        #[serde(default = "tol_stationary")]
        tol_stationary: f64,
        #[serde(default)]
        max_dist_to_saddle: Option<f64>,
        #[serde(default)]
        min_aligned_fraction: Option<f64>,
    },
    ToyU1u2 {
        integrator: IntegratorConfig,
        cases: Vec<ToyCase>,
        #[serde(default = "tol_conservation")]
        tol_conservation: f64,
        #[serde(default = "tol_closed_form")]
        tol_closed_form: f64,
    },
    EscapeG {
        deltas: Vec<f64>,
        step: f64,
    },
    LeakyNonbranch {
        integrator: IntegratorConfig,
        v_star: f64,
        u_star: Vec<f64>,
        #[serde(default)]
        gamma: Option<f64>,
        inits: Vec<Vec<f64>>,
        #[serde(default = "tol_conservation")]
        tol_conservation: f64,
        #[serde(default)]
        probe: Option<ProbeSpec>,
    },
    /// Input for the `kkt` command.
    Kkt {
        #[serde(default)]
        candidates: Vec<Vec<f64>>,
        /// Also report every KKT angle located on a grid of this size
        /// (2-parameter models only).
        #[serde(default)]
        theta_grid: Option<usize>,
        /// Minimize the residual over the kink-slope family.
        #[serde(default)]
        scan: bool,
    },
}

fn tol_stationary() -> f64 {
    1e-8
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Train { .. } => "train",
            Experiment::Ncf { .. } => "ncf",
            Experiment::Thm1 { .. } => "thm1",
            Experiment::Saddle { .. } => "saddle",
            Experiment::ToyU1u2 { .. } => "toy_u1u2",
            Experiment::EscapeG { .. } => "escape_g",
            Experiment::LeakyNonbranch { .. } => "leaky_nonbranch",
            Experiment::Kkt { .. } => "kkt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Delta,
    Seed,
    Forcing,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Delta => "delta",
            Axis::Seed => "seed",
            Axis::Forcing => "forcing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    /// Reads and validates a config file. Relative data paths are made
    /// absolute against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| bad(format!("{}: {e}", path.display())))?;
        if let Some(DataSpec::Csv { path: p, .. }) = &mut cfg.data {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        content_hash(self)
    }

    /// `<name>-<hash>`, the output directory of this config.
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.name, self.hash())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(bad("name must be non-empty and use only [A-Za-z0-9_-]"));
        }
        self.policy
            .validate(self.model.as_ref().map_or(0.0, |m| alpha_of(&m.architecture)))
            .map_err(|e| bad(e.to_string()))?;
        let needs_problem = !matches!(
            self.experiment,
            Experiment::ToyU1u2 { .. } | Experiment::EscapeG { .. }
        );
        if needs_problem {
            let model = self.build_model()?;
            let data = self.build_data()?;
            model.check_data(&data).map_err(|e| bad(e.to_string()))?;
        }
        let integ = |i: &IntegratorConfig| i.validate().map_err(|e| bad(e.to_string()));
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(format!("{what} must be positive and finite")))
            }
        };
        match &self.experiment {
            Experiment::Train {
                integrator,
                init_std,
                beta_samples,
                ..
            } => {
                integ(integrator)?;
                positive(*init_std, "init_std")?;
                if *beta_samples == 0 {
                    return Err(bad("beta_samples must be at least 1"));
                }
                self.require_loss()?;
            }
            Experiment::Ncf {
                integrator, u0, forcing, ..
            } => {
                integ(integrator)?;
                self.require_loss()?;
                if let Some(u) = u0 {
                    let k = self.build_model()?.param_dim();
                    if u.len() != k {
                        return Err(bad(format!("u0 has {} entries, model has {k}", u.len())));
                    }
                }
                if forcing.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
                    return Err(bad("forcing levels must be finite and non-negative"));
                }
            }
            Experiment::Thm1 { harness, .. } => {
                integ(&harness.integ)?;
                integ(&harness.ncf_integ)?;
                if harness.deltas.is_empty() {
                    return Err(bad("thm1 needs at least one delta"));
                }
                for d in &harness.deltas {
                    positive(*d, "delta")?;
                }
                self.require_loss()?;
            }
            Experiment::Saddle { harness, .. } => {
                integ(&harness.integ)?;
                integ(&harness.ncf_integ)?;
                if harness.deltas.is_empty() {
                    return Err(bad("saddle needs at least one delta"));
                }
                for d in &harness.deltas {
                    positive(*d, "delta")?;
                }
                self.require_loss()?;
            }
            Experiment::ToyU1u2 { integrator, cases, .. } => {
                integ(integrator)?;
                if cases.is_empty() {
                    return Err(bad("toy_u1u2 needs at least one case"));
                }
                for c in cases {
                    if let Some(p) = &c.policy {
                        p.validate(-1.0).map_err(|e| bad(e.to_string()))?;
                    }
                }
            }
            Experiment::EscapeG { deltas, step } => {
                positive(*step, "step")?;
                if deltas.is_empty() || deltas.iter().any(|d| !(0.0..0.1).contains(d)) {
                    return Err(bad("escape_g needs deltas in [0, 0.1)"));
                }
            }
            Experiment::LeakyNonbranch {
                integrator,
                inits,
                u_star,
                ..
            } => {
                integ(integrator)?;
                self.require_loss()?;
                let d = self.build_model()?.input_dim();
                if u_star.len() != d || inits.iter().any(|w| w.len() != d + 1) {
                    return Err(bad("u_star and inits must match a single two-layer neuron"));
                }
            }
            Experiment::Kkt { .. } => {}
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(bad("sweep values are empty"));
            }
            for &v in &s.values {
                self.with_axis(s.axis, v)?;
            }
        }
        Ok(())
    }

    fn require_loss(&self) -> Result<Loss, CliError> {
        self.loss
            .ok_or_else(|| bad(format!("{} needs a loss", self.experiment.kind())))
    }

    pub fn loss(&self) -> Result<Loss, CliError> {
        self.require_loss()
    }

    pub fn build_model(&self) -> Result<NetworkModel, CliError> {
        let spec = self
            .model
            .as_ref()
            .ok_or_else(|| bad(format!("{} needs a model", self.experiment.kind())))?;
        NetworkModel::new(spec.architecture.clone(), spec.input_dim).map_err(|e| bad(e.to_string()))
    }

    pub fn build_data(&self) -> Result<Dataset, CliError> {
        let spec = self
            .data
            .as_ref()
            .ok_or_else(|| bad(format!("{} needs data", self.experiment.kind())))?;
        let ds = match spec {
            DataSpec::Fig1 { n, random_seed } => {
                if *n == 0 {
                    return Err(bad("data needs at least one sample"));
                }
                let inputs = match random_seed {
                    Some(s) => data::random_circle_inputs(*n, *s),
                    None => data::circle_inputs(*n),
                };
                let labels = inputs.chunks_exact(2).map(data::fig1_label).collect();
                Dataset::new_unit_norm(2, inputs, labels)
            }
            DataSpec::Inline {
                inputs,
                labels,
                mirror,
            } => {
                let ds = Dataset::from_columns(inputs, labels.clone());
                match mirror {
                    None => ds,
                    Some(Mirror::Odd) => ds.map(|d| d.mirrored()),
                    Some(Mirror::Even) => ds.map(|d| d.mirrored_even()),
                }
            }
            DataSpec::Csv { path, unit_norm } => {
                return read_csv(path, *unit_norm);
            }
        };
        ds.map_err(|e| bad(e.to_string()))
    }

    /// A copy with one sweep coordinate applied.
    pub fn with_axis(&self, axis: Axis, value: f64) -> Result<RunConfig, CliError> {
        let mut c = self.clone();
        c.sweep = None;
        match (axis, &mut c.experiment) {
            (Axis::Seed, _) => {
                if !(value >= 0.0 && value.fract() == 0.0 && value < 2f64.powi(53)) {
                    return Err(bad(format!("seed values must be non-negative integers, got {value}")));
                }
                c.seed = value as u64;
            }
            (Axis::Delta, Experiment::Thm1 { harness, .. }) => harness.deltas = vec![value],
            (Axis::Delta, Experiment::Saddle { harness, .. }) => harness.deltas = vec![value],
            (Axis::Delta, Experiment::EscapeG { deltas, .. }) => *deltas = vec![value],
            (Axis::Forcing, Experiment::Ncf { forcing, .. }) => *forcing = vec![value],
            (axis, e) => {
                return Err(bad(format!(
                    "sweep axis {} does not apply to {}",
                    axis.name(),
                    e.kind()
                )))
            }
        }
        Ok(c)
    }
}

fn alpha_of(kind: &ModelKind) -> f64 {
    match kind {
        ModelKind::TwoLayerLeakyRelu { alpha, .. }
        | ModelKind::SquaredRelu { alpha, .. }
        | ModelKind::DiagonalTwoHomogeneous { alpha, .. }
        | ModelKind::FixedOuterDeepRelu { alpha, .. } => *alpha,
    }
}

fn read_csv(path: &Path, unit_norm: bool) -> Result<Dataset, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    if rows.is_empty() || rows[0].len() < 2 {
        return Err(bad(format!("{}: need at least one input column and a label", path.display())));
    }
    let d = rows[0].len() - 1;
    if rows.iter().any(|r| r.len() != d + 1) {
        return Err(bad(format!("{}: ragged rows", path.display())));
    }
    let labels = rows.iter().map(|r| r[d]).collect();
    let inputs = rows.iter().flat_map(|r| r[..d].iter().copied()).collect();
    let ds = if unit_norm {
        Dataset::new_unit_norm(d, inputs, labels)
    } else {
        Dataset::new(d, inputs, labels)
    };
    ds.map_err(|e| bad(e.to_string()))
}
