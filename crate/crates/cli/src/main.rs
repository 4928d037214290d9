use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use dispatch_core::harness::{
    calibrated_instance, export_results, oracle_suite, replay, run_case, theorem1_witness, theorem2_suite,
    trace_invariants, two_scenario_check, witness_conditions, CaseSpec, Experiment, ExperimentConfig, GridConfig,
    GridSurface, Manifest, PointForecast, SuiteReport,
};
use dispatch_core::dispatch::{roll_horizon, DispatchMode, DispatchOptions};
use dispatch_core::pricing::PriceSeries;
use dispatch_core::settlement::{profit_with_scheme, LocBasis, Scheme};
use dispatch_core::solver::Tolerances;

#[derive(Parser)]
#[command(name = "dispatch-sim", version, about = "Rolling-window dispatch, pricing and settlement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo case and export CSV/JSON results.
    Run(RunArgs),
    /// Sweep a resource's bid cost and ramp limit and export profit surfaces.
    Grid(GridArgs),
    /// Run the invariant and property suites; exits non-zero on any failure.
    Check(CheckArgs),
    /// Rerun a manifest and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's case (1-4).
    #[arg(long)]
    case: Option<u8>,
    /// Comma-separated forecast error levels, e.g. 0.001,0.01,0.03.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    scenarios: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use 300 scenarios and 1000 trials unless given explicitly.
    #[arg(long)]
    full: bool,
    #[arg(long, value_parser = parse_point_forecast)]
    point_forecast: Option<PointForecast>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    resource: Option<String>,
    /// `start:end:step`
    #[arg(long, value_parser = parse_range)]
    c_range: Option<[f64; 3]>,
    /// `start:end:step`
    #[arg(long, value_parser = parse_range)]
    ramp_range: Option<[f64; 3]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Random instances in the TLMP suite.
    #[arg(long, default_value_t = 500)]
    instances: usize,
    /// Random instances in the oracle suite.
    #[arg(long, default_value_t = 50)]
    oracle: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the calibrated instance's window LPs to this directory.
    #[arg(long)]
    dump_lp: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_range(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected start:end:step".to_string())
}

fn parse_point_forecast(s: &str) -> Result<PointForecast, String> {
    match s {
        "sampled" => Ok(PointForecast::Sampled),
        "mean" => Ok(PointForecast::Mean),
        _ => Err("expected `sampled` or `mean`".into()),
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(c) = args.case {
        cfg.case = CaseSpec::Numbered(c);
    }
    if args.full {
        cfg.scenarios = 300;
        cfg.trials = 1000;
    }
    cfg.sigmas = args.sigma.unwrap_or(cfg.sigmas);
    cfg.trials = args.trials.unwrap_or(cfg.trials);
    cfg.scenarios = args.scenarios.unwrap_or(cfg.scenarios);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.point_forecast = args.point_forecast.unwrap_or(cfg.point_forecast);
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .context("no output directory: pass --out or set out_dir")?;
    let exp = Experiment::from_config(cfg)?;
    info!(
        "{}: {} trials, K = {}, sigmas {:?}",
        exp.config.case.label(),
        exp.config.trials,
        exp.config.scenarios,
        exp.config.sigmas
    );
    let result = run_case(&exp)?;
    let manifest = export_results(&result, &out)?;
    let mut ok = true;
    for s in &result.sigmas {
        let m = &s.summary;
        println!(
            "sigma {:<6} trials {:>4} failed {:>3}  LMP LOC {:>10.4} ± {:.4}  TLMP LOC {:>10.3e}  MS_LMP {:>10.4}  MS_TLMP {:>10.4}",
            s.sigma, m.n_trials, m.n_failed, m.loc_lmp_total.mean, m.loc_lmp_total.stderr, m.loc_tlmp_total.mean,
            m.ms_lmp.mean, m.ms_tlmp.mean
        );
        ok &= m.max_tlmp_loc_relative <= 1e-6 && m.corollary_violations == 0 && m.lemma1_max <= 1e-6;
    }
    println!("wrote {} files to {}", manifest.files.len() + 1, out.display());
    Ok(ok)
}

fn grid(args: GridArgs) -> Result<bool> {
    let mut cfg = GridConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(r) = args.resource {
        cfg.resource = r;
    }
    cfg.cost_range = args.c_range.unwrap_or(cfg.cost_range);
    cfg.ramp_range = args.ramp_range.unwrap_or(cfg.ramp_range);
    let surface = cfg.run()?;
    std::fs::create_dir_all(&args.out)?;
    surface.write_csv(BufWriter::new(File::create(args.out.join("grid.csv"))?))?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(args.out.join("grid.json"))?), &surface)?;
    print_grid(&surface);
    Ok(true)
}

fn print_grid(s: &GridSurface) {
    let best = s
        .points
        .iter()
        .flatten()
        .filter(|p| p.feasible)
        .max_by(|a, b| a.profit_lmp.total_cmp(&b.profit_lmp));
    if let Some(p) = best {
        println!("max LMP profit {:.4} at cost {}, ramp {}", p.profit_lmp, p.cost, p.ramp);
    }
    let infeasible = s.points.iter().flatten().filter(|p| !p.feasible).count();
    println!("{} grid points, {} infeasible", s.points.iter().map(Vec::len).sum::<usize>(), infeasible);
}

fn report(name: &str, r: &SuiteReport) -> bool {
    println!(
        "{name}: {} instances ({} skipped), worst residual {:.3e}, lemma 1 max {:.3e}, corollary {}/{} violations",
        r.instances, r.skipped, r.worst, r.tally.lemma1_max, r.tally.corollary_violations, r.tally.corollary_checked
    );
    for f in &r.failures {
        println!("  {f}");
    }
    r.passed() && r.tally.lemma1_max <= 1e-6 && r.tally.corollary_violations == 0 && r.surplus_gap <= 1e-9
}

fn check(args: CheckArgs) -> Result<bool> {
    let mut ok = true;

    let inst = calibrated_instance();
    let opts = DispatchOptions {
        dump_dir: args.dump_lp.clone(),
        ..DispatchOptions::default()
    };
    let trace = roll_horizon(&inst.fleet, &inst.demand, &inst.forecast, DispatchMode::Deterministic, &opts)?;
    let prices = PriceSeries::from_trace(&trace);
    let lmp = profit_with_scheme(Scheme::Lmp, &trace, &prices, &inst.fleet, LocBasis::Bid, &Tolerances::default())?;
    let g3 = &lmp.resources[2];
    println!(
        "calibrated: LMP {:?}, G3 TLMP-D {:?}, in-market {:.6}, LOC {:.6}",
        trace.lmp(),
        prices.tlmp_d(2),
        g3.in_market,
        g3.loc
    );
    let inv = trace_invariants(&trace);
    ok &= inv.lemma1_max <= 1e-6 && inv.corollary_violations == 0;

    ok &= report("TLMP LOC suite", &theorem2_suite(args.instances, args.seed));
    ok &= report("oracle suite", &oracle_suite(args.oracle, args.seed));

    let mut worst = 0.0f64;
    let mut done = 0;
    for s in args.seed.. {
        if done == 10 {
            break;
        }
        if let Ok((primal, obj)) = two_scenario_check(s) {
            worst = worst.max(primal).max(obj);
            done += 1;
        }
    }
    println!("two-scenario window vs extensive form: worst difference {worst:.3e}");
    ok &= worst <= 1e-6;

    let w = theorem1_witness();
    let (fleet, trace) = w.run()?;
    let pair = [
        fleet.index_of(&w.pair[0]).context("witness pair")?,
        fleet.index_of(&w.pair[1]).context("witness pair")?,
    ];
    let c = witness_conditions(&fleet, &trace, pair, w.t_star)?;
    println!("two-storage witness: conditions {}, LMP LOC {:?}", c.conditions_hold(), c.loc_lmp);
    ok &= c.conditions_hold() && c.loc_lmp.iter().any(|&l| l > 0.01);
    ok &= trace_invariants(&trace).corollary_violations == 0;
    Ok(ok)
}

fn replay_cmd(args: ReplayArgs) -> Result<bool> {
    let original: Manifest = serde_json::from_str(&std::fs::read_to_string(&args.manifest)?)?;
    let fresh = replay(&args.manifest, &args.out)?;
    let mut same = true;
    for (name, hash) in &original.files {
        let matches = fresh.files.get(name) == Some(hash);
        println!("{name}: {}", if matches { "identical" } else { "DIFFERS" });
        same &= matches;
    }
    Ok(same)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Grid(a) => grid(a),
        Command::Check(a) => check(a),
        Command::Replay(a) => replay_cmd(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("invariant check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
