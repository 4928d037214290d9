use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::oracle::{extensive_form, one_shot_dispatch};
use crate::dispatch::{
    roll_horizon, solve_window, BindingRecord, Boundary, DispatchError, DispatchMode, DispatchOptions, DispatchTrace,
    WindowProblem,
};
use crate::model::{generator_as_esr, BidParameters, EsrSpec, Fleet, Ramps, Resource};
use crate::pricing::{corollary_gap, soc_price_via_limits, PriceSeries};
use crate::scenario::{GaussianForecast, PerfectForecast, ScenarioSet};
use crate::settlement::{profit_with_scheme, LocBasis, Scheme};
use crate::solver::{LpStatus, Tolerances};

const IDENTITY_TOL: f64 = 1e-6;

/// Lemma 1 and Corollary 1 checks accumulated over binding records.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct InvariantTally {
    pub windows: usize,
    pub lemma1_max: f64,
    pub corollary_checked: usize,
    pub corollary_violations: usize,
    pub corollary_max_gap: f64,
}

impl InvariantTally {
    pub fn merge(&mut self, other: &InvariantTally) {
        self.windows += other.windows;
        self.lemma1_max = self.lemma1_max.max(other.lemma1_max);
        self.corollary_checked += other.corollary_checked;
        self.corollary_violations += other.corollary_violations;
        self.corollary_max_gap = self.corollary_max_gap.max(other.corollary_max_gap);
    }

    pub fn add_record(&mut self, rec: &BindingRecord) {
        self.windows += 1;
        for i in 0..rec.resources.len() {
            self.lemma1_max = self.lemma1_max.max(lemma1_gap(rec, i));
            if let Some(gap) = corollary_gap(rec, i) {
                self.corollary_checked += 1;
                self.corollary_max_gap = self.corollary_max_gap.max(gap);
                if gap > IDENTITY_TOL {
                    self.corollary_violations += 1;
                }
            }
        }
    }
}

/// `|φ - (Δδ_t + sum Δδ_{t',k})|` for resource `i`.
pub fn lemma1_gap(rec: &BindingRecord, i: usize) -> f64 {
    (soc_price_via_limits(rec, i) - rec.resources[i].phi).abs()
}

pub fn trace_invariants(trace: &DispatchTrace) -> InvariantTally {
    let mut tally = InvariantTally::default();
    for rec in &trace.records {
        tally.add_record(rec);
    }
    tally
}

/// A random fleet with demand path and forecast settings.
#[derive(Debug, Clone, Serialize)]
pub struct RandomInstance {
    pub fleet: Fleet,
    pub demand: Vec<f64>,
    pub sigma: f64,
    pub scenarios: usize,
    pub seed: u64,
}

fn maybe_ramp(rng: &mut ChaCha8Rng, cap: f64) -> Option<f64> {
    rng.random_bool(0.7).then(|| rng.random_range(0.1..1.0) * cap)
}

fn random_storage(rng: &mut ChaCha8Rng, id: String) -> EsrSpec {
    let eff_c = rng.random_range(0.8..=1.0);
    let eff_d = rng.random_range(0.8..=1.0);
    let cost_c = rng.random_range(5.0..25.0);
    let cap_d = rng.random_range(2.0..20.0);
    let cap_c = rng.random_range(2.0..20.0);
    let soc_min = rng.random_range(0.0..5.0);
    let soc_max = soc_min + rng.random_range(2.0..40.0);
    EsrSpec {
        id,
        cost_d: cost_c / (eff_c * eff_d) + rng.random_range(0.5..15.0),
        cost_c,
        cap_d,
        cap_c,
        ramps: Ramps {
            up_d: maybe_ramp(rng, cap_d),
            down_d: maybe_ramp(rng, cap_d),
            up_c: maybe_ramp(rng, cap_c),
            down_c: maybe_ramp(rng, cap_c),
        },
        soc_min: Some(soc_min),
        soc_max: Some(soc_max),
        soc_init: rng.random_range(soc_min..=soc_max),
        eff_c,
        eff_d,
        init_d: 0.0,
        init_c: 0.0,
    }
}

/// Up to `max_n` resources. The first is an expensive generator without
/// ramp limits sized to cover any demand; the rest are ramp-limited
/// generators and storage units. With `perturb`, every cost gets small
/// per-interval offsets so that optimal dispatch is unique.
pub fn random_fleet(rng: &mut ChaCha8Rng, max_n: usize, horizon: usize, window: usize, peak: f64, perturb: bool) -> Fleet {
    let n = rng.random_range(1..=max_n.max(1));
    let mut resources = Vec::with_capacity(n);
    let mut flex = generator_as_esr("F0", peak * 1.5 + 50.0, 0.0, rng.random_range(50.0..80.0)).unwrap();
    flex.ramps = Ramps {
        up_c: Some(0.0),
        down_c: Some(0.0),
        ..Ramps::UNBOUNDED
    };
    resources.push(Resource::truthful(flex));
    for j in 1..n {
        let spec = if rng.random_bool(0.5) {
            let cap = rng.random_range(10.0..0.6 * peak + 20.0);
            let ramp = rng.random_range(0.05..0.6) * cap;
            let mut g = generator_as_esr(&format!("G{j}"), cap, ramp, rng.random_range(10.0..45.0)).unwrap();
            g.init_d = rng.random_range(0.0..0.3) * cap;
            g
        } else {
            random_storage(rng, format!("S{j}"))
        };
        resources.push(Resource::truthful(spec));
    }
    if perturb {
        for r in &mut resources {
            let offsets = |rng: &mut ChaCha8Rng| (0..horizon).map(|_| Some(rng.random_range(-0.5..0.5))).collect::<Vec<_>>();
            let d: Vec<Option<f64>> = offsets(rng).into_iter().map(|o| o.map(|o| o + r.truth.cost_d)).collect();
            let c: Vec<Option<f64>> = offsets(rng).into_iter().map(|o| o.map(|o| o + r.truth.cost_c)).collect();
            r.bid = BidParameters {
                cost_d_by_interval: Some(d),
                cost_c_by_interval: Some(c),
                ..BidParameters::truthful()
            };
        }
    }
    Fleet::new(resources, horizon, window)
}

/// A random instance within `N <= 5, T <= 24, W <= 4, K <= 20` and
/// `σ ∈ {0, 0.01, 0.03}`.
pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.random_range(1..=24);
    let window = rng.random_range(1..=4);
    let base = rng.random_range(40.0..150.0);
    let swing = rng.random_range(0.0..0.4);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let demand: Vec<f64> = (0..horizon)
        .map(|t| base * (1.0 + swing * (phase + t as f64 * 0.5).sin() + rng.random_range(-0.05..0.05)))
        .collect();
    let peak = demand.iter().cloned().fold(0.0, f64::max);
    let fleet = random_fleet(&mut rng, 5, horizon, window, peak, false);
    RandomInstance {
        fleet,
        demand,
        sigma: [0.0, 0.01, 0.03][rng.random_range(0..3)],
        scenarios: rng.random_range(1..=20),
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub skipped: usize,
    /// Largest `LOC / (1 + |Q|)` over all resources (TLMP suite) or the
    /// largest primal difference (oracle suite).
    pub worst: f64,
    pub worst_instance: Option<u64>,
    /// Largest LMP settlement identity residual relative to payment scale.
    pub surplus_gap: f64,
    pub tally: InvariantTally,
    pub failures: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn absorb(&mut self, seed: u64, outcome: Result<(f64, f64, InvariantTally), String>, limit: f64) {
        match outcome {
            Ok((worst, gap, tally)) => {
                self.instances += 1;
                if worst > self.worst || self.worst_instance.is_none() {
                    self.worst = self.worst.max(worst);
                    self.worst_instance = Some(seed);
                }
                self.surplus_gap = self.surplus_gap.max(gap);
                self.tally.merge(&tally);
                if worst > limit {
                    self.failures.push(format!("instance {seed}: residual {worst:e}"));
                }
            }
            Err(e) if e.starts_with("skip") => self.skipped += 1,
            Err(e) => {
                self.instances += 1;
                self.failures.push(format!("instance {seed}: {e}"));
            }
        }
    }
}

fn skip_or_fail(e: DispatchError) -> String {
    match e {
        DispatchError::Infeasible { .. } => format!("skip: {e}"),
        e => e.to_string(),
    }
}

fn theorem2_instance(inst: &RandomInstance) -> Result<(f64, f64, InvariantTally), String> {
    let fc = GaussianForecast {
        sigma: inst.sigma,
        k: inst.scenarios,
        seed: inst.seed,
        trial: 0,
    };
    let trace = roll_horizon(&inst.fleet, &inst.demand, &fc, DispatchMode::Stochastic, &DispatchOptions::default())
        .map_err(skip_or_fail)?;
    let prices = PriceSeries::from_trace(&trace);
    let tol = Tolerances::default();
    let tlmp = profit_with_scheme(Scheme::Tlmp, &trace, &prices, &inst.fleet, LocBasis::True, &tol).map_err(|e| e.to_string())?;
    let lmp = profit_with_scheme(Scheme::Lmp, &trace, &prices, &inst.fleet, LocBasis::True, &tol).map_err(|e| e.to_string())?;
    let worst = tlmp
        .resources
        .iter()
        .map(|r| r.loc_raw.abs() / (1.0 + r.q.abs()))
        .fold(0.0, f64::max);
    let scale = 1.0 + lmp.demand_charge.abs() + lmp.resources.iter().map(|r| r.payment.abs()).sum::<f64>();
    let gap = lmp
        .surplus_before_uplift
        .abs()
        .max((lmp.merchandising_surplus + lmp.total_loc()).abs())
        / scale;
    Ok((worst, gap, trace_invariants(&trace)))
}

/// LOC under TLMP on `n` random instances, seeds `seed .. seed + n`
/// (infeasible draws are skipped and replaced).
pub fn theorem2_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::default();
    let mut next = seed;
    while report.instances < n {
        let batch: Vec<u64> = (next..next + (n - report.instances) as u64).collect();
        next += batch.len() as u64;
        let outcomes: Vec<_> = batch.par_iter().map(|&s| (s, theorem2_instance(&random_instance(s)))).collect();
        for (s, o) in outcomes {
            report.absorb(s, o, IDENTITY_TOL);
        }
        if report.skipped > 10 * n {
            report.failures.push("too many infeasible draws".into());
            break;
        }
    }
    report
}

fn oracle_instance(seed: u64) -> Result<(f64, f64, InvariantTally), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_0a_c1e);
    let horizon = rng.random_range(2..=8);
    let demand: Vec<f64> = (0..horizon).map(|_| rng.random_range(40.0..120.0)).collect();
    let peak = demand.iter().cloned().fold(0.0, f64::max);
    let fleet = random_fleet(&mut rng, 4, horizon, horizon, peak, true);
    let views: Vec<_> = fleet.resources.iter().map(|r| r.bid_view()).collect();
    let boundary: Vec<_> = fleet.resources.iter().map(|r| Boundary::initial(&r.truth)).collect();
    let oracle = one_shot_dispatch(&views, &boundary, &demand).map_err(|e| e.to_string())?;
    if oracle.status == LpStatus::Infeasible {
        return Err("skip: infeasible".into());
    }
    let trace = roll_horizon(&fleet, &demand, &PerfectForecast, DispatchMode::Deterministic, &DispatchOptions::default())
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (t, rec) in trace.records.iter().enumerate() {
        for (i, r) in rec.resources.iter().enumerate() {
            worst = worst
                .max((r.g_d - oracle.g_d[0][i][t]).abs())
                .max((r.g_c - oracle.g_c[0][i][t]).abs());
        }
    }
    Ok((worst, 0.0, trace_invariants(&trace)))
}

/// Rolling dispatch with `W = T`, `K = 1` and no forecast error against
/// the one-shot horizon LP, on `n` random instances with unique optima.
pub fn oracle_suite(n: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::default();
    let mut next = seed;
    while report.instances < n {
        let s = next;
        next += 1;
        report.absorb(s, oracle_instance(s), IDENTITY_TOL);
        if report.skipped > 10 * n {
            report.failures.push("too many infeasible draws".into());
            break;
        }
    }
    report
}

/// Binding dispatch of a `K = 2` window against the extensive-form oracle.
/// Returns the largest primal difference and the objective difference.
pub fn two_scenario_check(seed: u64) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(2..=4);
    let d0 = rng.random_range(50.0..100.0);
    let paths: Vec<Vec<f64>> = (0..2)
        .map(|_| std::iter::once(d0).chain((1..len).map(|_| rng.random_range(40.0..120.0))).collect())
        .collect();
    let fleet = random_fleet(&mut rng, 4, len, len, 120.0, true);
    let views: Vec<_> = fleet.resources.iter().map(|r| r.bid_view()).collect();
    let boundary: Vec<_> = fleet.resources.iter().map(|r| Boundary::initial(&r.truth)).collect();
    let probs = [0.5, 0.5];
    let oracle = extensive_form(
        &views,
        &boundary,
        0,
        &[(probs[0], paths[0].clone()), (probs[1], paths[1].clone())],
    )
    .map_err(|e| e.to_string())?;
    let problem = WindowProblem {
        t: 0,
        scenarios: ScenarioSet::equiprobable(paths),
        boundary,
    };
    let rec = solve_window(&views, &problem, &DispatchOptions::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, r) in rec.resources.iter().enumerate() {
        worst = worst
            .max((r.g_d - oracle.g_d[0][i][0]).abs())
            .max((r.g_c - oracle.g_c[0][i][0]).abs());
    }
    Ok((worst, (rec.objective - oracle.objective).abs()))
}

