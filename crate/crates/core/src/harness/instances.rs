use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dispatch::{roll_horizon, DispatchMode, DispatchOptions, DispatchTrace};
use crate::model::{generator_as_esr, EsrSpec, Fleet, FleetDoc, Ramps, Resource, ResourceDoc, ResourceKind};
use crate::pricing::PriceSeries;
use crate::scenario::{FixedForecast, GaussianForecast};
use crate::settlement::{profit_with_scheme, LocBasis, Scheme};
use crate::solver::Tolerances;

pub const CALIBRATED_FLEET_JSON: &str = include_str!("../../data/calibrated_fleet.json");
pub const MONTE_CARLO_FLEET_JSON: &str = include_str!("../../data/mc_fleet.json");
pub const THEOREM1_WITNESS_JSON: &str = include_str!("../../data/theorem1_witness.json");

/// The two-interval, three-generator instance with its forecast windows.
#[derive(Debug, Clone)]
pub struct CalibratedInstance {
    pub fleet: Fleet,
    pub demand: Vec<f64>,
    pub forecast: FixedForecast,
}

pub fn calibrated_instance_doc() -> FleetDoc {
    FleetDoc::from_json(CALIBRATED_FLEET_JSON).expect("calibrated fixture parses")
}

pub fn calibrated_instance() -> CalibratedInstance {
    let doc = calibrated_instance_doc();
    let demand = doc.demand.clone().expect("calibrated fixture has demand");
    CalibratedInstance {
        fleet: doc.fleet().expect("calibrated fixture is valid"),
        forecast: FixedForecast {
            windows: vec![vec![420.0, 600.0], vec![600.0, 600.0]],
        },
        demand,
    }
}

impl CalibratedInstance {
    pub fn run(&self) -> Result<DispatchTrace, HarnessError> {
        Ok(roll_horizon(
            &self.fleet,
            &self.demand,
            &self.forecast,
            DispatchMode::Deterministic,
            &DispatchOptions::default(),
        )?)
    }
}

/// A stored instance of two storage units that are both marginal in the
/// same interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessDoc {
    pub fleet: FleetDoc,
    pub sigma: f64,
    pub scenarios: usize,
    pub seed: u64,
    /// 1-based interval where both units are marginal.
    pub t_star: usize,
    pub pair: [String; 2],
}

impl WitnessDoc {
    pub fn run(&self) -> Result<(Fleet, DispatchTrace), HarnessError> {
        let fleet = self.fleet.fleet()?;
        let demand = self
            .fleet
            .demand
            .clone()
            .ok_or_else(|| HarnessError::Config("witness has no demand path".into()))?;
        let fc = GaussianForecast {
            sigma: self.sigma,
            k: self.scenarios,
            seed: self.seed,
            trial: 0,
        };
        let trace = roll_horizon(&fleet, &demand, &fc, DispatchMode::Stochastic, &DispatchOptions::default())?;
        Ok((fleet, trace))
    }
}

pub fn theorem1_witness() -> WitnessDoc {
    serde_json::from_str(THEOREM1_WITNESS_JSON).expect("witness fixture parses")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessCheck {
    pub distinct_bids: bool,
    pub marginal: [bool; 2],
    pub ramps_slack: [bool; 2],
    pub soc_interior: [bool; 2],
    /// LMP LOC of the two units.
    pub loc_lmp: [f64; 2],
}

impl WitnessCheck {
    pub fn conditions_hold(&self) -> bool {
        self.distinct_bids
            && self.marginal.iter().all(|&b| b)
            && self.ramps_slack.iter().all(|&b| b)
            && self.soc_interior.iter().all(|&b| b)
    }
}

const EPS: f64 = 1e-6;

fn unit_conditions(fleet: &Fleet, trace: &DispatchTrace, i: usize, t: usize) -> (bool, bool, bool) {
    let s = fleet.resources[i].bid_spec();
    let rec = &trace.records[t].resources[i];
    let (d, c) = (rec.g_d, rec.g_c);
    let interior = |g: f64, cap: f64| g > EPS && g < cap - EPS;
    let marginal = (interior(d, s.cap_d) && c <= EPS) || (interior(c, s.cap_c) && d <= EPS);

    let g_d = trace.dispatch_d(i);
    let g_c = trace.dispatch_c(i);
    let prev = |v: &[f64], init: f64, t: usize| if t == 0 { init } else { v[t - 1] };
    let step_ok = |g: f64, p: f64, up: Option<f64>, down: Option<f64>| {
        up.map_or(true, |r| g - p < r - EPS) && down.map_or(true, |r| p - g < r - EPS)
    };
    let mut ramps = rec.ramp_slack > EPS;
    for tt in [t, t + 1] {
        if tt < g_d.len() {
            ramps &= step_ok(g_d[tt], prev(&g_d, s.init_d, tt), s.ramps.up_d, s.ramps.down_d);
            ramps &= step_ok(g_c[tt], prev(&g_c, s.init_c, tt), s.ramps.up_c, s.ramps.down_c);
        }
    }
    let soc = trace.records[t..].iter().all(|r| {
        let e = r.resources[i].soc;
        s.soc_min.map_or(true, |m| e > m + EPS) && s.soc_max.map_or(true, |m| e < m - EPS)
    });
    (marginal, ramps, soc)
}

/// Evaluates the two-unit marginality conditions at `t_star` (1-based) and
/// the LMP LOC of both units.
pub fn witness_conditions(fleet: &Fleet, trace: &DispatchTrace, pair: [usize; 2], t_star: usize) -> Result<WitnessCheck, HarnessError> {
    let t = t_star - 1;
    let prices = PriceSeries::from_trace(trace);
    let lmp = profit_with_scheme(Scheme::Lmp, trace, &prices, fleet, LocBasis::True, &Tolerances::default())?;
    let [a, b] = pair;
    let (sa, sb) = (fleet.resources[a].bid_view(), fleet.resources[b].bid_view());
    let distinct_bids = (0..trace.records.len())
        .any(|t| sa.curve_d.at(t) != sb.curve_d.at(t) || sa.curve_c.at(t) != sb.curve_c.at(t));
    let ca = unit_conditions(fleet, trace, a, t);
    let cb = unit_conditions(fleet, trace, b, t);
    Ok(WitnessCheck {
        distinct_bids,
        marginal: [ca.0, cb.0],
        ramps_slack: [ca.1, cb.1],
        soc_interior: [ca.2, cb.2],
        loc_lmp: [lmp.resources[a].loc, lmp.resources[b].loc],
    })
}

fn to_doc(fleet: &Fleet, demand: &[f64]) -> FleetDoc {
    let resources = fleet
        .resources
        .iter()
        .map(|r| {
            let s = &r.truth;
            ResourceDoc {
                id: s.id.clone(),
                kind: if s.is_storage() { ResourceKind::Esr } else { ResourceKind::Generator },
                cost_d: s.cost_d,
                cost_c: if s.is_storage() { s.cost_c } else { 0.0 },
                cap_d: s.cap_d,
                cap_c: s.cap_c,
                ramp_up_d: s.ramps.up_d,
                ramp_down_d: s.ramps.down_d,
                ramp_up_c: if s.is_storage() { s.ramps.up_c } else { None },
                ramp_down_c: if s.is_storage() { s.ramps.down_c } else { None },
                soc_min: s.soc_min,
                soc_max: s.soc_max,
                soc_init: s.soc_init,
                eff_c: s.eff_c,
                eff_d: s.eff_d,
                init_d: s.init_d,
                init_c: s.init_c,
                bid: r.bid.clone(),
            }
        })
        .collect();
    FleetDoc {
        horizon: fleet.horizon,
        window: fleet.window,
        resources: resources,
        demand: Some(demand.to_vec()),
    }
}

fn witness_storage(rng: &mut ChaCha8Rng, id: &str, cost_d: f64) -> EsrSpec {
    let cap = rng.random_range(5.0..20.0);
    let soc_max = rng.random_range(10.0..60.0);
    EsrSpec {
        id: id.into(),
        cost_d,
        cost_c: rng.random_range(1.0..5.0),
        cap_d: cap,
        cap_c: cap,
        ramps: Ramps::UNBOUNDED,
        soc_min: Some(0.0),
        soc_max: Some(soc_max),
        soc_init: rng.random_range(0.2..0.9) * soc_max,
        eff_c: 0.95,
        eff_d: 0.95,
        init_d: 0.0,
        init_c: 0.0,
    }
}

/// Candidate instance for seed `s`: a cheap base generator, a mid-merit
/// generator, an expensive flexible unit and two storage units with
/// different discharge costs. The last intervals have low demand, so
/// storage ends the horizon with energy left.
fn witness_candidate(s: u64) -> WitnessDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(s);
    let horizon = rng.random_range(6..=10);
    let window = rng.random_range(2..=4);
    let freq = rng.random_range(0.5..1.2);
    let mut demand: Vec<f64> = (0..horizon).map(|t| round2(100.0 * (1.0 + 0.3 * (t as f64 * freq).sin()))).collect();
    let tail = rng.random_range(1..=2);
    for d in demand.iter_mut().rev().take(tail) {
        *d = round2(rng.random_range(40.0..75.0));
    }
    let mut flex = generator_as_esr("F", 500.0, 0.0, 60.0).unwrap();
    flex.ramps = Ramps {
        up_c: Some(0.0),
        down_c: Some(0.0),
        ..Ramps::UNBOUNDED
    };
    let base = generator_as_esr("L", 80.0, 1000.0, 5.0).unwrap();
    let mid = generator_as_esr("G", round2(rng.random_range(60.0..110.0)), 1000.0, 30.0).unwrap();
    let ca = round2(rng.random_range(8.0..15.0));
    let a = witness_storage(&mut rng, "A", ca);
    let cb = round2(rng.random_range(16.0..25.0));
    let b = witness_storage(&mut rng, "B", cb);
    let round_spec = |mut e: EsrSpec| {
        e.cost_c = round2(e.cost_c);
        e.cap_d = round2(e.cap_d);
        e.cap_c = e.cap_d;
        e.soc_max = e.soc_max.map(round2);
        e.soc_init = round2(e.soc_init);
        e
    };
    let fleet = Fleet::new(
        [flex, base, mid, round_spec(a), round_spec(b)].into_iter().map(Resource::truthful).collect(),
        horizon,
        window,
    );
    WitnessDoc {
        fleet: to_doc(&fleet, &demand),
        sigma: rng.random_range(1..=10) as f64 / 100.0,
        scenarios: rng.random_range(1..=20),
        seed: s,
        t_star: 1,
        pair: ["A".into(), "B".into()],
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Tries seeds `seed .. seed + tries` and returns the first candidate in
/// which both storage units are marginal in the same interval and at least
/// one has an LMP LOC above `min_loc`.
pub fn search_theorem1_witness(seed: u64, tries: usize, min_loc: f64) -> Option<WitnessDoc> {
    for s in seed..seed + tries as u64 {
        let doc = witness_candidate(s);
        let Ok((fleet, trace)) = doc.run() else { continue };
        let pair = [fleet.index_of("A")?, fleet.index_of("B")?];
        for t_star in 1..=fleet.horizon {
            let Ok(check) = witness_conditions(&fleet, &trace, pair, t_star) else { continue };
            if check.conditions_hold() && check.loc_lmp.iter().any(|&l| l > min_loc) {
                return Some(WitnessDoc { t_star, ..doc });
            }
        }
    }
    None
}
