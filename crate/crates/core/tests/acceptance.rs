//! Acceptance criteria 1-10. Runs as a plain binary so that the pass/fail
//! line of every criterion is always printed.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dispatch_core::harness::{
    bid_manipulation_grid, calibrated_instance, export_results, oracle_suite, replay, run_case, theorem1_witness,
    theorem2_suite, trace_invariants, two_scenario_check, witness_conditions, CaseResult, Experiment, ExperimentConfig,
    GridSpec, InvariantTally, SuiteReport, MONTE_CARLO_FLEET_JSON,
};
use dispatch_core::dispatch::DispatchMode;
use dispatch_core::model::FleetDoc;
use dispatch_core::pricing::PriceSeries;
use dispatch_core::scenario::shipped_profile;
use dispatch_core::settlement::{profit_with_scheme, LocBasis, Scheme};
use dispatch_core::solver::Tolerances;

const SIGMAS: [f64; 3] = [0.001, 0.01, 0.03];

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(n: usize, o: &Outcome, took: Duration) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {tag} ({:.2?}) {}", took, o.detail);
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6
}

fn criterion1() -> (Outcome, InvariantTally) {
    let start = Instant::now();
    let inst = calibrated_instance();
    let trace = inst.run().expect("calibrated instance solves");
    let prices = PriceSeries::from_trace(&trace);
    let lmp = profit_with_scheme(Scheme::Lmp, &trace, &prices, &inst.fleet, LocBasis::Bid, &Tolerances::default())
        .expect("settlement");
    let g3 = inst.fleet.index_of("G3").unwrap();
    let r = &lmp.resources[g3];
    let lambda = trace.lmp();
    let tlmp = prices.tlmp_d(g3);
    let took = start.elapsed();
    let pass = close(lambda[0], 25.0)
        && close(lambda[1], 30.0)
        && close(tlmp[0], 28.0)
        && close(tlmp[1], 30.0)
        && close(r.in_market, 1.4)
        && close(r.loc, 0.2)
        && close(r.total_profit, 1.6)
        && took < Duration::from_secs(1);
    let detail = format!(
        "lambda {lambda:?}, G3 TLMP {tlmp:?}, in-market {:.9}, LOC {:.9}, total {:.9}",
        r.in_market, r.loc, r.total_profit
    );
    (Outcome { pass, detail }, trace_invariants(&trace))
}

fn criterion2(report: &SuiteReport) -> Outcome {
    Outcome {
        pass: report.passed() && report.instances == 500 && report.worst <= 1e-6,
        detail: format!(
            "{} instances ({} infeasible draws replaced), max |LOC|/(1+|Q|) = {:.3e}",
            report.instances, report.skipped, report.worst
        ),
    }
}

fn criterion3() -> (Outcome, InvariantTally) {
    let w = theorem1_witness();
    let (fleet, trace) = w.run().expect("witness dispatch solves");
    let a = fleet.index_of(&w.pair[0]).expect("pair id");
    let b = fleet.index_of(&w.pair[1]).expect("pair id");
    let both_storage = fleet.resources[a].truth.is_storage() && fleet.resources[b].truth.is_storage();
    let check = witness_conditions(&fleet, &trace, [a, b], w.t_star).expect("settlement");
    let pass = both_storage && check.conditions_hold() && check.loc_lmp.iter().any(|&l| l > 0.01);
    let detail = format!(
        "pair {:?} at t* = {}: distinct bids {}, marginal {:?}, ramps slack {:?}, SOC interior {:?}, LMP LOC {:?}",
        w.pair, w.t_star, check.distinct_bids, check.marginal, check.ramps_slack, check.soc_interior, check.loc_lmp
    );
    (Outcome { pass, detail }, trace_invariants(&trace))
}

fn criterion4(tallies: &[InvariantTally]) -> Outcome {
    let windows: usize = tallies.iter().map(|t| t.windows).sum();
    let worst = tallies.iter().map(|t| t.lemma1_max).fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-6 && windows > 0,
        detail: format!("{windows} windows, max |phi - sum of SOC-limit multipliers| = {worst:.3e}"),
    }
}

fn criterion5(tallies: &[InvariantTally]) -> Outcome {
    let checked: usize = tallies.iter().map(|t| t.corollary_checked).sum();
    let violations: usize = tallies.iter().map(|t| t.corollary_violations).sum();
    let gap = tallies.iter().map(|t| t.corollary_max_gap).fold(0.0, f64::max);
    Outcome {
        pass: violations == 0 && checked > 0,
        detail: format!("{checked} resource-windows with no binding SOC or ramp limits, {violations} violations, max gap {gap:.3e}"),
    }
}

fn criterion6() -> Outcome {
    let suite = oracle_suite(50, 0);
    let mut worst_two = 0.0f64;
    let mut checked = 0;
    let mut seed = 0;
    while checked < 20 && seed < 200 {
        if let Ok((primal, obj)) = two_scenario_check(seed) {
            worst_two = worst_two.max(primal).max(obj);
            checked += 1;
        }
        seed += 1;
    }
    Outcome {
        pass: suite.passed() && suite.instances == 50 && suite.worst <= 1e-6 && checked == 20 && worst_two <= 1e-6,
        detail: format!(
            "one-shot oracle: {} instances, max primal diff {:.3e}; two-scenario window: {checked} instances, max diff {:.3e}",
            suite.instances, suite.worst, worst_two
        ),
    }
}

fn criterion7(cases: &[CaseResult], suite: &SuiteReport) -> Outcome {
    let mut worst = suite.surplus_gap;
    let mut trials = suite.instances;
    for c in cases {
        for s in &c.sigmas {
            worst = worst.max(s.summary.max_surplus_identity_gap);
            trials += s.summary.n_trials;
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("{trials} settled trials, max relative identity residual {worst:.3e}"),
    }
}

fn run_cases() -> Vec<CaseResult> {
    let fleet = FleetDoc::from_json(MONTE_CARLO_FLEET_JSON).unwrap().fleet().unwrap();
    (1..=4u8)
        .map(|case| {
            let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
                "case": case,
                "fleet": "mc_fleet.json",
                "scenarios": 30,
                "sigmas": SIGMAS,
                "trials": 100,
                "seed": 7,
            }))
            .unwrap();
            let exp = Experiment::new(config, fleet.clone(), shipped_profile()).unwrap();
            run_case(&exp).expect("case runs")
        })
        .collect()
}

fn criterion8(cases: &[CaseResult], took: Duration) -> Outcome {
    let mut lines = Vec::new();
    let (mut a, mut b, mut c, mut d) = (true, true, true, true);
    let mean = |case: usize, k: usize| cases[case].sigmas[k].summary.loc_lmp_total.mean;
    for (ci, case) in cases.iter().enumerate() {
        let means: Vec<f64> = case.sigmas.iter().map(|s| s.summary.loc_lmp_total.mean).collect();
        a &= means.iter().all(|&m| m > 0.0) && means.windows(2).all(|w| w[1] >= w[0]);
        for s in &case.sigmas {
            let m = &s.summary;
            b &= m.max_tlmp_loc_relative <= 1e-6 && m.loc_tlmp_total.mean.abs() <= 1e-6;
            c &= m.ms_tlmp.mean >= 0.0;
            a &= m.n_failed == 0;
        }
        lines.push(format!(
            "case {}: LMP LOC {:?}, MS_TLMP {:?}",
            ci + 1,
            means.iter().map(|m| (m * 100.0).round() / 100.0).collect::<Vec<_>>(),
            case.sigmas.iter().map(|s| (s.summary.ms_tlmp.mean * 100.0).round() / 100.0).collect::<Vec<_>>()
        ));
    }
    for k in 0..SIGMAS.len() {
        d &= mean(1, k) <= mean(0, k) && mean(3, k) <= mean(2, k);
    }
    Outcome {
        pass: a && b && c && d && took <= Duration::from_secs(600),
        detail: format!("(a) {a} (b) {b} (c) {c} (d) {d}; {}", lines.join("; ")),
    }
}

fn criterion9() -> Outcome {
    let inst = calibrated_instance();
    let spec = GridSpec {
        resource: "G3".into(),
        costs: GridSpec::axis(26.0, 32.0, 0.5).unwrap(),
        ramps: GridSpec::axis(0.2, 1.0, 0.1).unwrap(),
        price_lmp: vec![25.0, 30.0],
        price_tlmp_d: vec![28.0, 30.0],
        price_tlmp_c: vec![28.0, 30.0],
    };
    let surface = bid_manipulation_grid(&spec, &inst.fleet, &inst.demand, &inst.forecast, DispatchMode::Deterministic)
        .expect("grid runs");
    let i = spec.costs.iter().position(|&c| c == 28.0).unwrap();
    let j = spec.ramps.iter().position(|&r| r == 0.8).unwrap();
    let truthful = &surface.points[i][j];
    let best = surface
        .points
        .iter()
        .flatten()
        .filter(|p| p.feasible)
        .max_by(|a, b| a.profit_lmp.total_cmp(&b.profit_lmp))
        .unwrap();
    let neighbors = surface.neighbors(i, j);
    let tlmp_local_max = neighbors.iter().all(|p| truthful.profit_tlmp >= p.profit_tlmp - 1e-9);
    let pass = close(truthful.profit_lmp, 1.6) && best.profit_lmp > truthful.profit_lmp + 1e-9 && tlmp_local_max;
    Outcome {
        pass,
        detail: format!(
            "truthful LMP profit {:.6}, max {:.6} at (c, r) = ({}, {}); TLMP profit truthful {:.6} vs neighbor max {:.6}",
            truthful.profit_lmp,
            best.profit_lmp,
            best.cost,
            best.ramp,
            truthful.profit_tlmp,
            neighbors.iter().map(|p| p.profit_tlmp).fold(f64::NEG_INFINITY, f64::max)
        ),
    }
}

fn criterion10() -> Outcome {
    let fleet = FleetDoc::from_json(MONTE_CARLO_FLEET_JSON).unwrap().fleet().unwrap();
    let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "case": 4, "fleet": "mc_fleet.json", "scenarios": 5, "sigmas": [0.01, 0.03], "trials": 6, "seed": 3,
    }))
    .unwrap();
    let exp = Experiment::new(config, fleet, shipped_profile()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let first = export_results(&run_case(&exp).unwrap(), &a).unwrap();
    let second = export_results(&run_case(&exp).unwrap(), &b).unwrap();
    let replayed = replay(&a.join("manifest.json"), &c).unwrap();
    let mut identical = first == second && first.files == replayed.files;
    for name in first.files.keys() {
        let bytes = std::fs::read(a.join(name)).unwrap();
        identical &= bytes == std::fs::read(b.join(name)).unwrap() && bytes == std::fs::read(c.join(name)).unwrap();
    }
    Outcome {
        pass: identical,
        detail: format!("{} output files compared across two runs and a manifest replay", first.files.len()),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut record = |n: usize, o: Outcome, took: Duration| {
        verdict(n, &o, took);
        all &= o.pass;
    };

    let t = Instant::now();
    let (c1, tally1) = criterion1();
    record(1, c1, t.elapsed());

    let t = Instant::now();
    let suite2 = theorem2_suite(500, 1);
    record(2, criterion2(&suite2), t.elapsed());

    let t = Instant::now();
    let (c3, tally3) = criterion3();
    record(3, c3, t.elapsed());

    let tallies = [tally1, suite2.tally, tally3];
    record(4, criterion4(&tallies), Duration::ZERO);
    record(5, criterion5(&tallies), Duration::ZERO);

    let t = Instant::now();
    record(6, criterion6(), t.elapsed());

    let t = Instant::now();
    let cases = run_cases();
    let took8 = t.elapsed();
    record(7, criterion7(&cases, &suite2), Duration::ZERO);
    record(8, criterion8(&cases, took8), took8);

    let t = Instant::now();
    record(9, criterion9(), t.elapsed());

    let t = Instant::now();
    record(10, criterion10(), t.elapsed());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
