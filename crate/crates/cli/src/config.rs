use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use ddeldp::dde_core::{verify_instability, DelayMeasure, PathGrid, Segment};
use ddeldp::experiments::ExitExperiment;
use ddeldp::ldp_rate::{RateModel, ScalarField};
use ddeldp::linear_fast::LinearExitProblem;
use ddeldp::markov_noise::MarkovNoiseModel;
use ddeldp::spectral::build_spectral_data;
use ddeldp::stochastic_sim::{NonlinearField, SdeRunConfig};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// A model document given either inline or as a path relative to the
/// config file.
#[derive(Debug, Clone)]
pub enum Ref<T> {
    Path(PathBuf),
    Inline(T),
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for Ref<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(p) => Ok(Ref::Path(p.into())),
            v => serde_json::from_value(v).map(Ref::Inline).map_err(serde::de::Error::custom),
        }
    }
}

/// Loaded config plus the directory its relative references resolve from.
pub struct Loaded<T> {
    pub doc: T,
    pub base: PathBuf,
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<Loaded<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{} is not valid JSON: {e}", path.display())))?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => return Err(CliError::Validation(format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"))),
        None => return Err(CliError::Validation("config is missing schema_version".into())),
    }
    let doc = serde_json::from_value(value).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { doc, base })
}

impl<T: DeserializeOwned + Clone> Ref<T> {
    pub fn resolve(&self, base: &Path) -> Result<T, CliError> {
        match self {
            Ref::Inline(v) => Ok(v.clone()),
            Ref::Path(p) => {
                let full = base.join(p);
                let text = fs::read_to_string(&full)
                    .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", full.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", full.display())))
            }
        }
    }
}

fn default_depth() -> f64 {
    5.0
}

fn default_margin() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
pub struct SystemConfig {
    pub measure: Ref<DelayMeasure>,
    #[serde(default)]
    pub noise: Option<Ref<MarkovNoiseModel>>,
    /// Roots are searched in `Re λ ∈ [−search_depth, margin]`.
    #[serde(default = "default_depth")]
    pub search_depth: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Constant { constant: Vec<f64>, grid_step: f64 },
    Segment(Ref<Segment>),
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfig {
    pub measure: Ref<DelayMeasure>,
    pub noise: Ref<MarkovNoiseModel>,
    #[serde(default)]
    pub drift: Option<Ref<NonlinearField>>,
    pub diffusion: Ref<NonlinearField>,
    pub epsilon: f64,
    pub init: InitSpec,
    pub horizon: f64,
    pub dt: f64,
    pub output_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_depth")]
    pub search_depth: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Also integrate the full delay equation (otherwise only the reduced
    /// process).
    #[serde(default = "default_true")]
    pub full: bool,
}

fn default_true() -> bool {
    true
}

impl SimulateConfig {
    pub fn build(&self, base: &Path) -> Result<SdeRunConfig, CliError> {
        let measure = self.measure.resolve(base)?;
        let report = verify_instability(&measure, self.search_depth, self.margin)?;
        let spectral = build_spectral_data(&measure, &report)?;
        let n = measure.dim();
        let init = self.init.build(&measure, base)?;
        let drift = match &self.drift {
            Some(r) => r.resolve(base)?,
            None => NonlinearField::zero(n),
        };
        let cfg = SdeRunConfig {
            measure,
            spectral,
            drift,
            diffusion: self.diffusion.resolve(base)?,
            noise: self.noise.resolve(base)?,
            epsilon: self.epsilon,
            init,
            horizon: self.horizon,
            dt: self.dt,
            output_step: self.output_step,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl InitSpec {
    pub fn build(&self, measure: &DelayMeasure, base: &Path) -> Result<Segment, CliError> {
        let seg = match self {
            InitSpec::Constant { constant, grid_step } => {
                Segment::constant(measure.max_delay(), *grid_step, &DVector::from_column_slice(constant))?
            }
            InitSpec::Segment(r) => r.resolve(base)?,
        };
        measure.eval_l0(&seg)?;
        Ok(seg)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct RateModelConfig {
    #[serde(default = "zero_field")]
    pub drift: ScalarField,
    #[serde(default = "unit_field")]
    pub coefficient: ScalarField,
    pub noise: Ref<MarkovNoiseModel>,
}

fn zero_field() -> ScalarField {
    ScalarField::Constant { value: 0.0 }
}

fn unit_field() -> ScalarField {
    ScalarField::Constant { value: 1.0 }
}

impl RateModelConfig {
    pub fn build(&self, base: &Path) -> Result<RateModel, CliError> {
        Ok(RateModel::from_fields(self.drift.clone(), self.coefficient.clone(), self.noise.resolve(base)?))
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ActionConfig {
    pub model: RateModelConfig,
    /// CSV with columns `t,v0`, relative to the config file.
    pub path: PathBuf,
}

impl ActionConfig {
    pub fn read_path(&self, base: &Path) -> Result<PathGrid, CliError> {
        let full = base.join(&self.path);
        let file = fs::File::open(&full).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", full.display())))?;
        Ok(PathGrid::read_csv(file)?)
    }
}

fn default_grid() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
pub struct QuasipotentialConfig {
    pub model: RateModelConfig,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LinearExitConfig {
    pub measure: Ref<DelayMeasure>,
    pub g: f64,
    pub sigma0: f64,
    pub t: f64,
    pub eta: InitSpec,
    pub b: f64,
    pub dt: f64,
}

impl LinearExitConfig {
    pub fn build(&self, base: &Path) -> Result<LinearExitProblem, CliError> {
        let measure = self.measure.resolve(base)?;
        let eta = self.eta.build(&measure, base)?;
        Ok(LinearExitProblem { measure, g: self.g, sigma0: self.sigma0, t: self.t, eta, b: self.b })
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct McExitConfig {
    pub run: SimulateConfig,
    pub a_lo: f64,
    pub a_hi: f64,
    pub horizon: f64,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub full_samples: usize,
    #[serde(default)]
    pub tau_points: Option<usize>,
    #[serde(default)]
    pub grid_size: Option<usize>,
}

impl McExitConfig {
    pub fn build(&self, base: &Path) -> Result<ExitExperiment, CliError> {
        let mut run = self.run.clone();
        run.epsilon = self.epsilons.first().copied().unwrap_or(0.1);
        run.horizon = self.horizon;
        Ok(ExitExperiment {
            run: run.build(base)?,
            a_lo: self.a_lo,
            a_hi: self.a_hi,
            horizon: self.horizon,
            epsilons: self.epsilons.clone(),
            samples: self.samples,
            seed: self.seed,
            full_samples: self.full_samples,
            tau_points: self.tau_points.unwrap_or(10),
            grid_size: self.grid_size.unwrap_or(64),
        })
    }
}

/// Header shared by every emitted JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub command: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Envelope<T> {
    pub fn new(command: &str, body: T) -> Self {
        Self { schema_version: SCHEMA_VERSION, command: command.into(), body }
    }
}
