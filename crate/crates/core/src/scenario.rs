//! Demand traces and per-window forecast scenarios.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based generator with a 64-bit seed and a 64-bit stream id. Each
//! (purpose, trial, window) triple gets its own stream, so trials can run in
//! any order or in parallel and still draw identical numbers.

use std::io::Read;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The 24-point daily profile shipped with the crate (`hour, demand_mwh`).
pub const SHIPPED_PROFILE_CSV: &str = include_str!("../data/base_profile.csv");

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("profile csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("profile file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid demand model: {0}")]
    Invalid(String),
}

#[derive(Deserialize)]
struct ProfileRow {
    hour: usize,
    demand_mwh: f64,
}

/// Reads a `hour, demand_mwh` CSV with hours numbered 1, 2, ... in order.
pub fn parse_profile(reader: impl Read) -> Result<Vec<f64>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: ProfileRow = row?;
        if row.hour != out.len() + 1 {
            return Err(ScenarioError::Invalid(format!(
                "expected hour {}, found {}",
                out.len() + 1,
                row.hour
            )));
        }
        if !(row.demand_mwh.is_finite() && row.demand_mwh > 0.0) {
            return Err(ScenarioError::Invalid(format!("non-positive demand at hour {}", row.hour)));
        }
        out.push(row.demand_mwh);
    }
    if out.is_empty() {
        return Err(ScenarioError::Invalid("empty profile".into()));
    }
    Ok(out)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<Vec<f64>, ScenarioError> {
    parse_profile(std::fs::File::open(path)?)
}

pub fn shipped_profile() -> Vec<f64> {
    parse_profile(SHIPPED_PROFILE_CSV.as_bytes()).expect("shipped profile is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandModel {
    pub base_profile: Vec<f64>,
    /// Trace noise standard deviation as a fraction of the profile mean.
    pub trace_noise_std: f64,
    /// Per-step forecast error σ as a fraction of the target demand.
    pub forecast_sigma: f64,
    pub scenarios: usize,
    pub seed: u64,
}

impl DemandModel {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.base_profile.is_empty() || self.base_profile.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(ScenarioError::Invalid("base profile must be positive".into()));
        }
        if !(self.trace_noise_std >= 0.0) || !(self.forecast_sigma >= 0.0) {
            return Err(ScenarioError::Invalid("noise levels must be non-negative".into()));
        }
        if self.scenarios == 0 {
            return Err(ScenarioError::Invalid("at least one scenario is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Trace = 1,
    Forecast = 2,
}

fn rng_for(seed: u64, stream: Stream, trial: u64, window: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | ((trial & 0xFFFF_FFFF) << 20) | (window & 0xF_FFFF));
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandTraces {
    pub traces: Vec<Vec<f64>>,
    /// Cells clipped at zero.
    pub clipped: usize,
}

/// `trace[j][t] = base[t] + s * mean(base) * z[j][t]` with i.i.d. standard
/// normal `z`, clipped at zero.
pub fn generate_demand_traces(model: &DemandModel, n_trials: usize) -> DemandTraces {
    let base = &model.base_profile;
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let scale = model.trace_noise_std * mean;
    let mut clipped = 0;
    let traces = (0..n_trials)
        .map(|j| {
            let mut rng = rng_for(model.seed, Stream::Trace, j as u64, 0);
            base.iter()
                .map(|&b| {
                    let v = b + scale * normal(&mut rng);
                    if v < 0.0 {
                        clipped += 1;
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    if clipped > 0 {
        log::warn!("{clipped} demand cells clipped at zero");
    }
    DemandTraces { traces, clipped }
}

/// Demand scenarios over one window, all starting with the realized demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    /// `paths[k][tau]` for lead `tau = 0 .. len`.
    pub paths: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
    pub clipped: usize,
}

impl ScenarioSet {
    pub fn single(path: Vec<f64>) -> Self {
        ScenarioSet {
            paths: vec![path],
            probs: vec![1.0],
            clipped: 0,
        }
    }

    pub fn equiprobable(paths: Vec<Vec<f64>>) -> Self {
        let k = paths.len();
        ScenarioSet {
            paths,
            probs: vec![1.0 / k as f64; k],
            clipped: 0,
        }
    }

    /// Number of intervals covered (binding plus advisory).
    pub fn len(&self) -> usize {
        self.paths.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self) -> usize {
        self.paths.len()
    }
}

fn window_len(trace: &[f64], t: usize, window: usize) -> usize {
    window.min(trace.len() - t)
}

/// `K` random-walk scenarios over `trace[t .. t + W]` (truncated at the end
/// of the trace). The error at lead `tau` is `σ d[t+tau] (z_1 + ... + z_tau)`
/// with the `z_i` standard normal and shared across leads of one scenario.
pub fn forecast_scenarios(
    trace: &[f64],
    t: usize,
    window: usize,
    k: usize,
    sigma: f64,
    seed: u64,
    trial: u64,
) -> ScenarioSet {
    let len = window_len(trace, t, window);
    let mut rng = rng_for(seed, Stream::Forecast, trial, t as u64);
    let mut clipped = 0;
    let paths = (0..k)
        .map(|_| {
            let mut walk = 0.0;
            (0..len)
                .map(|tau| {
                    let d = trace[t + tau];
                    if tau == 0 {
                        return d;
                    }
                    walk += normal(&mut rng);
                    let v = d + sigma * d * walk;
                    if v < 0.0 {
                        clipped += 1;
                        0.0
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    ScenarioSet {
        paths,
        probs: vec![1.0 / k as f64; k],
        clipped,
    }
}

/// The conditional-mean path of the forecast model, which is the true
/// future demand since forecast errors have zero mean.
pub fn deterministic_forecast(trace: &[f64], t: usize, window: usize) -> ScenarioSet {
    let len = window_len(trace, t, window);
    ScenarioSet::single(trace[t..t + len].to_vec())
}

/// Source of forecast scenarios for each rolling window.
pub trait ForecastProvider: Send + Sync {
    /// Scenarios for the window starting at `t` (0-based).
    fn scenarios(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet;

    /// The single path used by deterministic dispatch.
    fn point_forecast(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet {
        deterministic_forecast(trace, t, window)
    }
}

/// Perfect foresight: one scenario equal to the realized path.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectForecast;

impl ForecastProvider for PerfectForecast {
    fn scenarios(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet {
        deterministic_forecast(trace, t, window)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GaussianForecast {
    pub sigma: f64,
    pub k: usize,
    pub seed: u64,
    pub trial: u64,
}

impl ForecastProvider for GaussianForecast {
    fn scenarios(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet {
        forecast_scenarios(trace, t, window, self.k, self.sigma, self.seed, self.trial)
    }
}

/// Explicit per-window forecast paths. The first entry of each path is
/// replaced by the realized demand, and paths are cut at the trace end.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedForecast {
    pub windows: Vec<Vec<f64>>,
}

impl ForecastProvider for FixedForecast {
    fn scenarios(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet {
        let len = window_len(trace, t, window);
        let mut path: Vec<f64> = self.windows[t].iter().copied().take(len).collect();
        path.resize(len, *path.last().unwrap_or(&trace[t]));
        path[0] = trace[t];
        ScenarioSet::single(path)
    }

    fn point_forecast(&self, trace: &[f64], t: usize, window: usize) -> ScenarioSet {
        self.scenarios(trace, t, window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(std: f64) -> DemandModel {
        DemandModel {
            base_profile: shipped_profile(),
            trace_noise_std: std,
            forecast_sigma: 0.01,
            scenarios: 10,
            seed: 7,
        }
    }

    #[test]
    fn shipped_profile_has_24_hours() {
        let p = shipped_profile();
        assert_eq!(p.len(), 24);
        assert!(p.iter().all(|&d| d > 0.0));
    }

    #[test]
    fn profile_parser_rejects_gaps() {
        assert!(parse_profile("hour,demand_mwh\n1,10\n3,11\n".as_bytes()).is_err());
        assert!(parse_profile("hour,demand_mwh\n1,-1\n".as_bytes()).is_err());
        assert_eq!(parse_profile("hour, demand_mwh\n1, 10\n2, 11\n".as_bytes()).unwrap(), vec![10.0, 11.0]);
    }

    #[test]
    fn zero_noise_traces_equal_profile() {
        let m = model(0.0);
        let tr = generate_demand_traces(&m, 3);
        assert!(tr.traces.iter().all(|t| t == &m.base_profile));
    }

    #[test]
    fn trace_noise_matches_target() {
        let m = model(0.05);
        let tr = generate_demand_traces(&m, 1000);
        let mean = m.base_profile.iter().sum::<f64>() / 24.0;
        let target = 0.05 * mean;
        let diffs: Vec<f64> = tr
            .traces
            .iter()
            .flat_map(|t| t.iter().zip(&m.base_profile).map(|(a, b)| a - b))
            .collect();
        let var = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        let std = var.sqrt();
        assert!((std / target - 1.0).abs() < 0.1, "std {std} target {target}");
    }

    #[test]
    fn traces_are_reproducible() {
        let m = model(0.05);
        assert_eq!(generate_demand_traces(&m, 5), generate_demand_traces(&m, 5));
        let mut other = m.clone();
        other.seed = 8;
        assert_ne!(generate_demand_traces(&m, 5), generate_demand_traces(&other, 5));
    }

    #[test]
    fn zero_sigma_scenarios_are_the_true_path() {
        let trace = shipped_profile();
        let s = forecast_scenarios(&trace, 3, 4, 5, 0.0, 1, 0);
        assert_eq!(s.count(), 5);
        for p in &s.paths {
            assert_eq!(p, &trace[3..7].to_vec());
        }
        assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_component_is_realized() {
        let trace = shipped_profile();
        let s = forecast_scenarios(&trace, 10, 4, 50, 0.03, 2, 9);
        assert!(s.paths.iter().all(|p| p[0] == trace[10]));
    }

    #[test]
    fn lead_variance_grows_linearly() {
        let trace = shipped_profile();
        let sigma = 0.01;
        let s = forecast_scenarios(&trace, 5, 4, 10_000, sigma, 3, 0);
        for tau in 1..4 {
            let d = trace[5 + tau];
            let errs: Vec<f64> = s.paths.iter().map(|p| p[tau] - d).collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64;
            let target = tau as f64 * (sigma * d).powi(2);
            assert!((var / target - 1.0).abs() < 0.05, "tau {tau}: {var} vs {target}");
        }
    }

    #[test]
    fn deterministic_forecast_truncates() {
        let trace = shipped_profile();
        let s = deterministic_forecast(&trace, 23, 4);
        assert_eq!(s.paths, vec![vec![trace[23]]]);
        assert_eq!(deterministic_forecast(&trace, 2, 4), forecast_scenarios(&trace, 2, 4, 1, 0.0, 0, 0));
    }

    #[test]
    fn fixed_forecast_pins_realized_demand() {
        let f = FixedForecast {
            windows: vec![vec![400.0, 600.0], vec![600.0, 600.0]],
        };
        let trace = [420.0, 600.0];
        assert_eq!(f.scenarios(&trace, 0, 2).paths, vec![vec![420.0, 600.0]]);
        assert_eq!(f.scenarios(&trace, 1, 2).paths, vec![vec![600.0]]);
    }
}
