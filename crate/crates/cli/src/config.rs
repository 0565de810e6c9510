//! TOML run configurations. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use deconv_core::deconvolver::{FitConfig, ModelKind};
use deconv_core::hetero_stage1::Stage1Settings;
use deconv_core::simulation::{ErrorLaw, Scenario, Structure};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::AppError;

/// Parses `path` as `T`, reporting the offending key path on failure.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    let de = toml::Deserializer::new(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = e.path().to_string();
        let inner = e.into_inner();
        let msg = inner.message().to_string();
        if at == "." {
            AppError::Config(format!("{}: {msg}", path.display()))
        } else {
            AppError::Config(format!("{}: field `{at}`: {msg}", path.display()))
        }
    })
}

/// Paths in a config are relative to the config file itself.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawName {
    Normal,
    Mixture,
    T,
    Laplace,
}

fn default_m() -> usize {
    3
}

fn default_nu() -> f64 {
    6.0
}

fn default_structure() -> Structure {
    Structure::Identity
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub n: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    pub error_law: LawName,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_structure")]
    pub structure: Structure,
    #[serde(default)]
    pub heteroscedastic: bool,
    pub d_x: Option<f64>,
    pub d_err: Option<f64>,
}

impl ScenarioSection {
    pub fn scenario(&self) -> Scenario {
        let law = match self.error_law {
            LawName::Normal => ErrorLaw::Normal,
            LawName::Mixture => ErrorLaw::Mixture,
            LawName::T => ErrorLaw::MultivariateT { nu: self.nu },
            LawName::Laplace => ErrorLaw::Laplace,
        };
        let mut s = Scenario::reference(law, self.structure, self.n, self.heteroscedastic);
        s.m = self.m;
        if let Some(d) = self.d_x {
            s.d_x = d;
        }
        if let Some(d) = self.d_err {
            s.d_err = d;
        }
        s
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub scenario: ScenarioSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Section {
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub k_err: Option<usize>,
    pub k_x: Option<usize>,
    pub intervals: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitFile {
    pub data: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelKind,
    #[serde(default)]
    pub heteroscedastic: bool,
    pub k_x: Option<usize>,
    pub k_err: Option<usize>,
    pub iterations: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub grid_points: Option<usize>,
    pub max_clusters: Option<usize>,
    #[serde(default)]
    pub stage1: Stage1Section,
}

impl FitFile {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        let d = FitConfig::default();
        let s = Stage1Settings::default();
        FitConfig {
            model: self.model,
            heteroscedastic: self.heteroscedastic,
            k_x: self.k_x,
            k_err: self.k_err,
            iterations: self.iterations.unwrap_or(d.iterations),
            burn_in: self.burn_in.unwrap_or(d.burn_in),
            thin: self.thin.unwrap_or(d.thin),
            seed,
            grid_points: self.grid_points.unwrap_or(d.grid_points),
            max_clusters: self.max_clusters.unwrap_or(d.max_clusters),
            stage1: Stage1Settings {
                iterations: self.stage1.iterations.unwrap_or(s.iterations),
                burn_in: self.stage1.burn_in.unwrap_or(s.burn_in),
                k_err: self.stage1.k_err.unwrap_or(s.k_err),
                k_x: self.stage1.k_x.unwrap_or(s.k_x),
                intervals: self.stage1.intervals.unwrap_or(s.intervals),
                ..s
            },
            ..d
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceName {
    Truth,
    Uniform,
}

fn default_importance() -> Vec<ImportanceName> {
    vec![ImportanceName::Truth, ImportanceName::Uniform]
}

fn default_draws() -> usize {
    100_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub truth: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Importance-sampling draws per replication.
    #[serde(default = "default_draws")]
    pub m: usize,
    #[serde(default = "default_importance")]
    pub importance: Vec<ImportanceName>,
    /// Model label → one posterior (or truth) file per replication.
    pub fits: BTreeMap<String, Vec<PathBuf>>,
}
