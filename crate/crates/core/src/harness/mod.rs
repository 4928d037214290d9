//! Experiment orchestration: Monte Carlo cases, the bid manipulation grid,
//! invariant suites and result export.

mod check;
mod export;
mod grid;
mod instances;
mod montecarlo;
mod oracle;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{DispatchError, DispatchMode};
use crate::model::{has_errors, validate_fleet, Fleet, FleetDoc, ModelError};
use crate::scenario::{load_profile, shipped_profile, ScenarioError};
use crate::settlement::{LocBasis, Scheme, SettlementError};
use crate::solver::Tolerances;

pub use check::{
    lemma1_gap, oracle_suite, random_fleet, random_instance, theorem2_suite, trace_invariants, two_scenario_check, InvariantTally,
    RandomInstance, SuiteReport,
};
pub use export::{export_results, replay, sha256_hex, Manifest};
pub use grid::{bid_manipulation_grid, GridConfig, GridPoint, GridSpec, GridSurface};
pub use instances::{
    calibrated_instance, calibrated_instance_doc, search_theorem1_witness, theorem1_witness, witness_conditions,
    CalibratedInstance, WitnessCheck, WitnessDoc, CALIBRATED_FLEET_JSON, MONTE_CARLO_FLEET_JSON, THEOREM1_WITNESS_JSON,
};
pub use montecarlo::{run_case, CaseResult, SigmaResult, SigmaSummary, Stat, TraceRow, TrialMetrics, TrialOutcome};
pub use oracle::{extensive_form, one_shot_dispatch, ExtensiveSolution};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Settlement(#[from] SettlementError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Which Monte Carlo case to run. Cases 1 and 2 drop storage from the
/// fleet, cases 1 and 3 dispatch on a single point forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseSpec {
    Numbered(u8),
    Custom { mode: DispatchMode, include_storage: bool },
}

impl CaseSpec {
    pub fn mode(&self) -> Result<DispatchMode, HarnessError> {
        match *self {
            CaseSpec::Numbered(1 | 3) => Ok(DispatchMode::Deterministic),
            CaseSpec::Numbered(2 | 4) => Ok(DispatchMode::Stochastic),
            CaseSpec::Custom { mode, .. } => Ok(mode),
            CaseSpec::Numbered(n) => Err(HarnessError::Config(format!("unknown case {n}"))),
        }
    }

    pub fn include_storage(&self) -> Result<bool, HarnessError> {
        match *self {
            CaseSpec::Numbered(1 | 2) => Ok(false),
            CaseSpec::Numbered(3 | 4) => Ok(true),
            CaseSpec::Custom { include_storage, .. } => Ok(include_storage),
            CaseSpec::Numbered(n) => Err(HarnessError::Config(format!("unknown case {n}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CaseSpec::Numbered(n) => format!("case{n}"),
            CaseSpec::Custom { .. } => "custom".into(),
        }
    }
}

/// Point forecast used by deterministic cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PointForecast {
    /// One path drawn from the forecast error model (the first scenario of
    /// the stochastic case's set).
    #[default]
    Sampled,
    /// The conditional mean, which equals the realized path.
    Mean,
}

fn default_horizon() -> usize {
    24
}
fn default_window() -> usize {
    4
}
fn default_scenarios() -> usize {
    300
}
fn default_trials() -> usize {
    1000
}
fn default_noise() -> f64 {
    0.05
}
fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::Lmp, Scheme::Tlmp]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: CaseSpec,
    /// Fleet document, relative paths resolved against the config file.
    pub fleet: PathBuf,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_scenarios")]
    pub scenarios: usize,
    pub sigmas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub trace_noise_std: f64,
    /// `hour, demand_mwh` CSV; the shipped profile when absent.
    #[serde(default)]
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub loc_basis: LocBasis,
    #[serde(default)]
    pub point_forecast: PointForecast,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    /// Parses a config file, resolving relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let mut config: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        config.fleet = resolve(&config.fleet);
        config.profile = config.profile.as_deref().map(resolve);
        config.out_dir = config.out_dir.as_deref().map(resolve);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.case.mode()?;
        if self.sigmas.is_empty() {
            return Err(HarnessError::Config("sigma list is empty".into()));
        }
        if self.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(HarnessError::Config("sigmas must be finite and non-negative".into()));
        }
        if self.trials == 0 || self.scenarios == 0 || self.window == 0 || self.horizon == 0 {
            return Err(HarnessError::Config("trials, scenarios, window and horizon must be positive".into()));
        }
        if self.schemes.is_empty() {
            return Err(HarnessError::Config("no pricing scheme selected".into()));
        }
        Ok(())
    }
}

/// A configuration with its fleet and base profile resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub fleet: Fleet,
    pub profile: Vec<f64>,
}

impl Experiment {
    pub fn load(config_path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_config(ExperimentConfig::load(config_path)?)
    }

    /// Reads the fleet and profile named by `config`.
    pub fn from_config(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let fleet = FleetDoc::load(&config.fleet)?.fleet()?;
        let profile = match &config.profile {
            Some(p) => load_profile(p)?,
            None => shipped_profile(),
        };
        Self::new(config, fleet, profile)
    }

    /// Applies the case's storage selection and the configured horizon and
    /// window to `fleet`, then validates everything.
    pub fn new(config: ExperimentConfig, mut fleet: Fleet, profile: Vec<f64>) -> Result<Self, HarnessError> {
        config.validate()?;
        if !config.case.include_storage()? {
            fleet.resources.retain(|r| !r.truth.is_storage());
        }
        fleet.horizon = config.horizon;
        fleet.window = config.window;
        let diags = validate_fleet(&fleet);
        for d in &diags {
            log::warn!("{d}");
        }
        if has_errors(&diags) {
            return Err(HarnessError::Config("fleet failed validation".into()));
        }
        if profile.len() != config.horizon {
            return Err(HarnessError::Config(format!(
                "profile has {} intervals, horizon is {}",
                profile.len(),
                config.horizon
            )));
        }
        Ok(Experiment { config, fleet, profile })
    }
}
