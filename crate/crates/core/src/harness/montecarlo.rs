use rayon::prelude::*;
use serde::Serialize;

use super::check::{trace_invariants, InvariantTally};
use super::{Experiment, HarnessError, PointForecast};
use crate::dispatch::{roll_horizon_with, DispatchMode, DispatchOptions};
use crate::pricing::PriceSeries;
use crate::scenario::{generate_demand_traces, DemandModel, ForecastProvider, GaussianForecast, PerfectForecast};
use crate::settlement::{profit_with_scheme, Scheme, SettlementReport};
use crate::solver::DualSimplex;

/// One exported trace line: a resource in one interval of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub sigma: f64,
    pub trial: usize,
    /// 1-based interval.
    pub t: usize,
    pub resource: String,
    pub demand: f64,
    pub g_d: f64,
    pub g_c: f64,
    pub soc: f64,
    pub lmp: f64,
    pub tlmp_c: f64,
    pub tlmp_d: f64,
    pub phi: f64,
    pub delta_c: f64,
    pub delta_d: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialMetrics {
    pub settlements: Vec<SettlementReport>,
    pub invariants: InvariantTally,
    pub simultaneous: usize,
    pub clipped: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl TrialMetrics {
    pub fn settlement(&self, scheme: Scheme) -> Option<&SettlementReport> {
        self.settlements.iter().find(|s| s.scheme == scheme)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub result: Result<TrialMetrics, String>,
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, stderr, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSummary {
    pub sigma: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub loc_lmp_total: Stat,
    pub loc_lmp_generators: Stat,
    pub loc_lmp_storage: Stat,
    pub loc_tlmp_total: Stat,
    pub ms_lmp: Stat,
    pub ms_lmp_before_uplift: Stat,
    pub ms_tlmp: Stat,
    /// Largest `LOC_TLMP / (1 + |Q|)` over resources and trials.
    pub max_tlmp_loc_relative: f64,
    /// Largest settlement identity residual relative to the payment scale.
    pub max_surplus_identity_gap: f64,
    pub lemma1_max: f64,
    pub corollary_violations: usize,
    pub simultaneous: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaResult {
    pub sigma: f64,
    pub trials: Vec<TrialOutcome>,
    pub summary: SigmaSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub experiment: Experiment,
    pub sigmas: Vec<SigmaResult>,
}

fn run_trial(exp: &Experiment, sigma: f64, trial: usize, demand: &[f64]) -> Result<TrialMetrics, HarnessError> {
    let cfg = &exp.config;
    let mode = cfg.case.mode()?;
    let gaussian = |k| GaussianForecast {
        sigma,
        k,
        seed: cfg.seed,
        trial: trial as u64,
    };
    let (provider, call): (Box<dyn ForecastProvider>, DispatchMode) = match (mode, cfg.point_forecast) {
        (DispatchMode::Stochastic, _) => (Box::new(gaussian(cfg.scenarios)), DispatchMode::Stochastic),
        (DispatchMode::Deterministic, PointForecast::Sampled) => (Box::new(gaussian(1)), DispatchMode::Stochastic),
        (DispatchMode::Deterministic, PointForecast::Mean) => (Box::new(PerfectForecast), DispatchMode::Deterministic),
    };
    let opts = DispatchOptions {
        tolerances: cfg.tolerances,
        dump_dir: None,
    };
    let solver = DualSimplex::with_tolerances(cfg.tolerances);
    let trace = roll_horizon_with(&solver, &exp.fleet, demand, provider.as_ref(), call, &opts)?;
    let prices = PriceSeries::from_trace(&trace);
    let settlements = cfg
        .schemes
        .iter()
        .map(|&s| profit_with_scheme(s, &trace, &prices, &exp.fleet, cfg.loc_basis, &cfg.tolerances))
        .collect::<Result<Vec<_>, _>>()?;
    let ids = exp.fleet.ids();
    let mut rows = Vec::with_capacity(trace.records.len() * ids.len());
    for (t, rec) in trace.records.iter().enumerate() {
        for (i, id) in ids.iter().enumerate() {
            let r = &rec.resources[i];
            let p = &prices.resources[i][t];
            rows.push(TraceRow {
                sigma,
                trial,
                t: t + 1,
                resource: id.clone(),
                demand: rec.demand,
                g_d: r.g_d,
                g_c: r.g_c,
                soc: r.soc,
                lmp: rec.lambda,
                tlmp_c: p.tlmp_c,
                tlmp_d: p.tlmp_d,
                phi: p.phi,
                delta_c: p.ramp_c,
                delta_d: p.ramp_d,
            });
        }
    }
    Ok(TrialMetrics {
        settlements,
        invariants: trace_invariants(&trace),
        simultaneous: trace.simultaneous,
        clipped: trace.clipped,
        trace: rows,
    })
}

fn summarize(exp: &Experiment, sigma: f64, trials: &[TrialOutcome]) -> SigmaSummary {
    let ok: Vec<&TrialMetrics> = trials.iter().filter_map(|t| t.result.as_ref().ok()).collect();
    let storage: Vec<bool> = exp.fleet.resources.iter().map(|r| r.truth.is_storage()).collect();
    let per_trial = |scheme: Scheme, f: &dyn Fn(&SettlementReport) -> f64| -> Vec<f64> {
        ok.iter().filter_map(|m| m.settlement(scheme)).map(f).collect()
    };
    let storage = &storage;
    let loc_class = |want_storage: bool| {
        move |s: &SettlementReport| {
            s.resources
                .iter()
                .zip(storage)
                .filter(|(_, &st)| st == want_storage)
                .map(|(r, _)| r.loc)
                .sum::<f64>()
        }
    };
    let mut max_rel = 0.0f64;
    let mut max_gap = 0.0f64;
    for m in &ok {
        if let Some(s) = m.settlement(Scheme::Tlmp) {
            for r in &s.resources {
                max_rel = max_rel.max(r.loc / (1.0 + r.q.abs()));
            }
        }
        if let Some(s) = m.settlement(Scheme::Lmp) {
            let scale = 1.0 + s.demand_charge.abs() + s.resources.iter().map(|r| r.payment.abs()).sum::<f64>();
            let gap = s.surplus_before_uplift.abs().max((s.merchandising_surplus + s.total_loc()).abs());
            max_gap = max_gap.max(gap / scale);
        }
    }
    SigmaSummary {
        sigma,
        n_trials: ok.len(),
        n_failed: trials.len() - ok.len(),
        loc_lmp_total: Stat::of(&per_trial(Scheme::Lmp, &|s| s.total_loc())),
        loc_lmp_generators: Stat::of(&per_trial(Scheme::Lmp, &loc_class(false))),
        loc_lmp_storage: Stat::of(&per_trial(Scheme::Lmp, &loc_class(true))),
        loc_tlmp_total: Stat::of(&per_trial(Scheme::Tlmp, &|s| s.total_loc())),
        ms_lmp: Stat::of(&per_trial(Scheme::Lmp, &|s| s.merchandising_surplus)),
        ms_lmp_before_uplift: Stat::of(&per_trial(Scheme::Lmp, &|s| s.surplus_before_uplift)),
        ms_tlmp: Stat::of(&per_trial(Scheme::Tlmp, &|s| s.merchandising_surplus)),
        max_tlmp_loc_relative: max_rel,
        max_surplus_identity_gap: max_gap,
        lemma1_max: ok.iter().map(|m| m.invariants.lemma1_max).fold(0.0, f64::max),
        corollary_violations: ok.iter().map(|m| m.invariants.corollary_violations).sum(),
        simultaneous: ok.iter().map(|m| m.simultaneous).sum(),
    }
}

/// Runs every configured σ over `trials` demand traces. Trials run in
/// parallel; results are ordered by trial index, so the output does not
/// depend on scheduling.
pub fn run_case(exp: &Experiment) -> Result<CaseResult, HarnessError> {
    let cfg = &exp.config;
    let model = DemandModel {
        base_profile: exp.profile.clone(),
        trace_noise_std: cfg.trace_noise_std,
        forecast_sigma: 0.0,
        scenarios: cfg.scenarios,
        seed: cfg.seed,
    };
    model.validate()?;
    let traces = generate_demand_traces(&model, cfg.trials);
    let mut sigmas = Vec::with_capacity(cfg.sigmas.len());
    for &sigma in &cfg.sigmas {
        let trials: Vec<TrialOutcome> = traces
            .traces
            .par_iter()
            .enumerate()
            .map(|(j, d)| TrialOutcome {
                trial: j,
                result: run_trial(exp, sigma, j, d).map_err(|e| {
                    log::warn!("sigma {sigma}, trial {j}: {e}");
                    e.to_string()
                }),
            })
            .collect();
        let summary = summarize(exp, sigma, &trials);
        log::info!(
            "{} sigma {sigma}: mean LMP LOC {:.4}, {} failed",
            cfg.case.label(),
            summary.loc_lmp_total.mean,
            summary.n_failed
        );
        sigmas.push(SigmaResult { sigma, trials, summary });
    }
    Ok(CaseResult {
        experiment: exp.clone(),
        sigmas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_of_known_sample() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[]).n, 0);
    }
}
