//! Stochastic rolling-window dispatch.
//!
//! Each window is a two-stage scenario tree: one binding node shared by all
//! scenarios, then `K` independent chains of advisory nodes. Constraint rows
//! are written without probability weights so their duals can be summed
//! across scenarios directly.
//!
//! Row and sign conventions (all duals are the solver's signed `lower - upper`):
//!
//! * `balance`: `sum_i (gD - gC) = d`, dual λ.
//! * `soc_tr`: `-E_n + E_parent + ξC gC - gD / ξD = 0` (the root uses the
//!   boundary SOC as a constant), dual φ.
//! * `ramp_d` / `ramp_c`: `g_n - g_parent` in `[-r_down, r_up]`. The lower
//!   multiplier is μ_ and the upper one μ̄.
//! * Capacity and SOC limits are variable bounds, with multipliers ρ and δ.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EsrSpec, Fleet, ResourceView};
use crate::scenario::{ForecastProvider, ScenarioSet};
use crate::solver::{
    kkt_residuals, write_lp, DualPair, DualSimplex, KktReport, LinearProgram, LpError, LpSolution, LpSolver,
    LpStatus, RowBounds, RowId, SolverError, Tag, Tolerances, VarId,
};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("interval {}: window dispatch is infeasible", .t + 1)]
    Infeasible { t: usize },
    #[error("interval {}: window dispatch is unbounded", .t + 1)]
    Unbounded { t: usize },
    #[error("interval {}: {source}", .t + 1)]
    Solver { t: usize, source: SolverError },
    #[error("interval {}: resource `{resource}` boundary SOC {soc} outside its limits", .t + 1)]
    Boundary { t: usize, resource: String, soc: f64 },
    #[error("interval {}: optimality check failed ({what}, residual {residual:e})", .t + 1)]
    Kkt { t: usize, what: String, residual: f64 },
    #[error("invalid window: {0}")]
    Input(String),
    #[error("lp construction: {0}")]
    Lp(#[from] LpError),
    #[error("lp dump: {0}")]
    Io(#[from] std::io::Error),
}

/// Dispatch and SOC carried from the previous binding interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundary {
    pub soc: f64,
    pub g_d: f64,
    pub g_c: f64,
}

impl Boundary {
    pub fn initial(spec: &EsrSpec) -> Self {
        Boundary {
            soc: spec.soc_init,
            g_d: spec.init_d,
            g_c: spec.init_c,
        }
    }
}

/// One window: start interval `t` (0-based), scenario paths whose first
/// entry is the realized demand, and the boundary state of each resource.
#[derive(Debug, Clone)]
pub struct WindowProblem {
    pub t: usize,
    pub scenarios: ScenarioSet,
    pub boundary: Vec<Boundary>,
}

impl WindowProblem {
    pub fn demand(&self) -> f64 {
        self.scenarios.paths[0][0]
    }
}

#[derive(Debug, Clone, Copy)]
struct NodeVars {
    gd: VarId,
    gc: VarId,
    e: Option<VarId>,
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeRows {
    soc: Option<RowId>,
    ramp_d: Option<RowId>,
    ramp_c: Option<RowId>,
}

/// A window LP together with the handles needed to read its solution.
#[derive(Debug, Clone)]
pub struct WindowLp {
    pub lp: LinearProgram,
    pub t: usize,
    /// Intervals covered, binding included.
    pub len: usize,
    /// Scenario branches (1 when `len == 1`).
    pub branches: usize,
    balance: Vec<RowId>,
    vars: Vec<Vec<NodeVars>>,
    rows: Vec<Vec<NodeRows>>,
}

impl WindowLp {
    pub fn nodes(&self) -> usize {
        1 + self.branches * (self.len - 1)
    }

    /// Node of lead `tau >= 1` on branch `k`; the root is node 0.
    pub fn node(&self, tau: usize, k: usize) -> usize {
        debug_assert!(tau >= 1 && tau < self.len);
        1 + k * (self.len - 1) + (tau - 1)
    }

    fn parent(&self, n: usize) -> Option<usize> {
        if n == 0 {
            None
        } else if (n - 1) % (self.len - 1) == 0 {
            Some(0)
        } else {
            Some(n - 1)
        }
    }

    pub fn gd(&self, i: usize, n: usize) -> VarId {
        self.vars[i][n].gd
    }

    pub fn gc(&self, i: usize, n: usize) -> VarId {
        self.vars[i][n].gc
    }

    pub fn soc(&self, i: usize, n: usize) -> Option<VarId> {
        self.vars[i][n].e
    }

    pub fn balance(&self, n: usize) -> RowId {
        self.balance[n]
    }
}

pub(crate) fn ramp_bounds(lo: Option<f64>, hi: Option<f64>, cap: f64) -> Option<(f64, f64)> {
    // A ramp at least as wide as the capacity can never bind.
    let lo = lo.filter(|&r| r < cap);
    let hi = hi.filter(|&r| r < cap);
    if lo.is_none() && hi.is_none() {
        return None;
    }
    Some((lo.map_or(f64::NEG_INFINITY, |r| -r), hi.unwrap_or(f64::INFINITY)))
}

fn node_tag(group: &'static str, i: usize, t: usize, tau: usize, k: usize) -> Tag {
    if tau == 0 {
        Tag::at(group, &[i, t])
    } else {
        Tag::at(group, &[i, t + tau, k])
    }
}

/// Builds the window LP from the reported resource views.
pub fn build_window(views: &[ResourceView], problem: &WindowProblem, tol: &Tolerances) -> Result<WindowLp, DispatchError> {
    let t = problem.t;
    let sc = &problem.scenarios;
    if sc.count() == 0 || sc.is_empty() {
        return Err(DispatchError::Input("no scenarios".into()));
    }
    if sc.paths.iter().any(|p| p.len() != sc.len()) || sc.probs.len() != sc.count() {
        return Err(DispatchError::Input("ragged scenario set".into()));
    }
    if problem.boundary.len() != views.len() {
        return Err(DispatchError::Input("boundary state does not match the fleet".into()));
    }
    let d0 = sc.paths[0][0];
    if sc.paths.iter().any(|p| (p[0] - d0).abs() > 0.0) {
        return Err(DispatchError::Input("scenarios disagree on the binding demand".into()));
    }
    for (v, b) in views.iter().zip(&problem.boundary) {
        let s = &v.spec;
        let lo = s.soc_min.unwrap_or(f64::NEG_INFINITY);
        let hi = s.soc_max.unwrap_or(f64::INFINITY);
        if s.has_soc_limits() && (b.soc < lo - tol.feas || b.soc > hi + tol.feas) {
            return Err(DispatchError::Boundary {
                t,
                resource: s.id.clone(),
                soc: b.soc,
            });
        }
    }

    let len = sc.len();
    let branches = if len == 1 { 1 } else { sc.count() };
    let mut w = WindowLp {
        lp: LinearProgram::new(),
        t,
        len,
        branches,
        balance: Vec::new(),
        vars: vec![Vec::new(); views.len()],
        rows: vec![Vec::new(); views.len()],
    };
    let nodes = w.nodes();
    // (tau, k, probability weight) per node.
    let mut meta = vec![(0usize, 0usize, 1.0f64)];
    for k in 0..branches {
        for tau in 1..len {
            meta.push((tau, k, sc.probs[k]));
        }
    }

    for (i, v) in views.iter().enumerate() {
        let s = &v.spec;
        for &(tau, k, p) in meta.iter().take(nodes) {
            let at = t + tau;
            let gd = w.lp.add_var(node_tag("gd", i, t, tau, k), p * v.curve_d.at(at), 0.0, s.cap_d)?;
            let gc = w.lp.add_var(node_tag("gc", i, t, tau, k), -p * v.curve_c.at(at), 0.0, s.cap_c)?;
            let e = if s.has_soc_limits() {
                Some(w.lp.add_var(
                    node_tag("soc", i, t, tau, k),
                    0.0,
                    s.soc_min.unwrap_or(f64::NEG_INFINITY),
                    s.soc_max.unwrap_or(f64::INFINITY),
                )?)
            } else {
                None
            };
            w.vars[i].push(NodeVars { gd, gc, e });
        }
    }

    for (n, &(tau, k, _)) in meta.iter().enumerate().take(nodes) {
        let mut coeffs = Vec::with_capacity(2 * views.len());
        for i in 0..views.len() {
            coeffs.push((w.vars[i][n].gd, 1.0));
            coeffs.push((w.vars[i][n].gc, -1.0));
        }
        let tag = if tau == 0 { Tag::at("balance", &[t]) } else { Tag::at("balance", &[t + tau, k]) };
        let r = w.lp.add_row(tag, coeffs, RowBounds::Eq(sc.paths[k][tau]))?;
        w.balance.push(r);
    }

    for (i, v) in views.iter().enumerate() {
        let s = &v.spec;
        let b = problem.boundary[i];
        let rd = ramp_bounds(s.ramps.down_d, s.ramps.up_d, s.cap_d);
        let rc = ramp_bounds(s.ramps.down_c, s.ramps.up_c, s.cap_c);
        for (n, &(tau, k, _)) in meta.iter().enumerate().take(nodes) {
            let nv = w.vars[i][n];
            let parent = w.parent(n);
            let mut rows = NodeRows::default();
            if let Some(e) = nv.e {
                let mut coeffs = vec![(e, -1.0), (nv.gc, s.eff_c), (nv.gd, -1.0 / s.eff_d)];
                let rhs = match parent {
                    Some(p) => {
                        coeffs.push((w.vars[i][p].e.expect("soc tracked on every node"), 1.0));
                        0.0
                    }
                    None => -b.soc,
                };
                rows.soc = Some(w.lp.add_row(node_tag("soc_tr", i, t, tau, k), coeffs, RowBounds::Eq(rhs))?);
            }
            let mut ramp = |group: &'static str, lim: Option<(f64, f64)>, var: VarId, pvar: Option<VarId>, prev: f64| {
                lim.map(|(lo, hi)| {
                    let (coeffs, off) = match pvar {
                        Some(pv) => (vec![(var, 1.0), (pv, -1.0)], 0.0),
                        None => (vec![(var, 1.0)], prev),
                    };
                    w.lp.add_row(node_tag(group, i, t, tau, k), coeffs, RowBounds::Range(lo + off, hi + off))
                })
                .transpose()
            };
            rows.ramp_d = ramp("ramp_d", rd, nv.gd, parent.map(|p| w.vars[i][p].gd), b.g_d)?;
            rows.ramp_c = ramp("ramp_c", rc, nv.gc, parent.map(|p| w.vars[i][p].gc), b.g_c)?;
            w.rows[i].push(rows);
        }
    }
    Ok(w)
}

/// Binding-interval values and multipliers of one resource. Each
/// [`DualPair`] holds the lower-side multiplier in `lower` (μ_, δ_, ρ_) and
/// the upper-side one in `upper` (μ̄, δ̄, ρ̄).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceRecord {
    pub g_d: f64,
    pub g_c: f64,
    pub soc: f64,
    /// Bid costs and efficiencies used in the window.
    pub cost_d: f64,
    pub cost_c: f64,
    pub eff_c: f64,
    pub eff_d: f64,
    pub phi: f64,
    pub mu_d: DualPair,
    pub mu_c: DualPair,
    /// First advisory step ramp multipliers, one per branch.
    pub mu_d_next: Vec<DualPair>,
    pub mu_c_next: Vec<DualPair>,
    pub delta: DualPair,
    /// SOC limit multipliers at every advisory node.
    pub delta_advisory: Vec<DualPair>,
    pub rho_d: DualPair,
    pub rho_c: DualPair,
    /// Smallest slack over the boundary and first-step ramp constraints
    /// (infinite when none exist).
    pub ramp_slack: f64,
    /// Smallest slack over all SOC limits in the window.
    pub soc_slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindingRecord {
    pub t: usize,
    pub demand: f64,
    pub lambda: f64,
    /// Expected window cost at the optimum.
    pub objective: f64,
    pub resources: Vec<ResourceRecord>,
    pub iterations: usize,
    pub kkt: KktReport,
}

fn range_slack(lp: &LinearProgram, r: RowId, x: &[f64]) -> f64 {
    let row = &lp.rows()[r.0];
    let a = row.activity(x);
    (a - row.lower).min(row.upper - a)
}

fn extract(w: &WindowLp, views: &[ResourceView], problem: &WindowProblem, sol: &LpSolution) -> BindingRecord {
    let lp = &w.lp;
    let x = &sol.x;
    let first_step: Vec<usize> = if w.len > 1 { (0..w.branches).map(|k| w.node(1, k)).collect() } else { Vec::new() };
    let resources = views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = &v.spec;
            let root = w.vars[i][0];
            let rows = &w.rows[i];
            let g_d = sol.value(root.gd);
            let g_c = sol.value(root.gc);
            let soc = match root.e {
                Some(e) => sol.value(e),
                None => s.soc_after(problem.boundary[i].soc, g_d, g_c),
            };
            let row_pair = |r: Option<RowId>| r.map_or(DualPair::default(), |r| sol.row_dual(r));
            let mut ramp_slack = f64::INFINITY;
            for n in std::iter::once(0).chain(first_step.iter().copied()) {
                for r in [rows[n].ramp_d, rows[n].ramp_c].into_iter().flatten() {
                    ramp_slack = ramp_slack.min(range_slack(lp, r, x));
                }
            }
            let mut soc_slack = f64::INFINITY;
            if root.e.is_some() {
                for nv in &w.vars[i] {
                    let e = nv.e.expect("soc tracked on every node");
                    let var = &lp.vars()[e.0];
                    soc_slack = soc_slack.min(x[e.0] - var.lower).min(var.upper - x[e.0]);
                }
            }
            ResourceRecord {
                g_d,
                g_c,
                soc,
                cost_d: v.curve_d.at(w.t),
                cost_c: v.curve_c.at(w.t),
                eff_c: s.eff_c,
                eff_d: s.eff_d,
                phi: rows[0].soc.map_or(0.0, |r| sol.eq_dual(r)),
                mu_d: row_pair(rows[0].ramp_d),
                mu_c: row_pair(rows[0].ramp_c),
                mu_d_next: first_step.iter().map(|&n| row_pair(rows[n].ramp_d)).collect(),
                mu_c_next: first_step.iter().map(|&n| row_pair(rows[n].ramp_c)).collect(),
                delta: root.e.map_or(DualPair::default(), |e| sol.bound_dual(e)),
                delta_advisory: w.vars[i][1..]
                    .iter()
                    .map(|nv| nv.e.map_or(DualPair::default(), |e| sol.bound_dual(e)))
                    .collect(),
                rho_d: sol.bound_dual(root.gd),
                rho_c: sol.bound_dual(root.gc),
                ramp_slack,
                soc_slack,
            }
        })
        .collect();
    BindingRecord {
        t: w.t,
        demand: problem.demand(),
        lambda: sol.eq_dual(w.balance[0]),
        objective: sol.objective,
        resources,
        iterations: sol.iterations,
        kkt: kkt_residuals(lp, sol),
    }
}

impl ResourceRecord {
    /// `sum_k Δμ^D_{t+1,k} - Δμ^D_t` with `Δμ = μ̄ - μ_`.
    pub fn ramp_price_d(&self) -> f64 {
        self.mu_d_next.iter().map(|m| -m.net()).sum::<f64>() + self.mu_d.net()
    }

    pub fn ramp_price_c(&self) -> f64 {
        self.mu_c_next.iter().map(|m| -m.net()).sum::<f64>() + self.mu_c.net()
    }

    /// Residuals of the binding-interval stationarity conditions
    /// `c^D - λ + φ/ξ^D - Δ^D + Δρ^D = 0` and
    /// `-c^C + λ - ξ^C φ - Δ^C + Δρ^C = 0`, with `Δρ = ρ̄ - ρ_`.
    pub fn stationarity(&self, lambda: f64) -> (f64, f64) {
        let rd = self.rho_d.upper - self.rho_d.lower;
        let rc = self.rho_c.upper - self.rho_c.lower;
        let d = self.cost_d - lambda + self.phi / self.eff_d - self.ramp_price_d() + rd;
        let c = -self.cost_c + lambda - self.eff_c * self.phi - self.ramp_price_c() + rc;
        (d, c)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DispatchOptions {
    pub tolerances: Tolerances,
    /// Write every window LP to `<dir>/window_<t>.lp`.
    pub dump_dir: Option<PathBuf>,
}

/// Builds, solves and checks one window with the given solver.
pub fn solve_window_with(
    solver: &dyn LpSolver,
    views: &[ResourceView],
    problem: &WindowProblem,
    opts: &DispatchOptions,
) -> Result<BindingRecord, DispatchError> {
    let t = problem.t;
    let tol = &opts.tolerances;
    let w = build_window(views, problem, tol)?;
    if let Some(dir) = &opts.dump_dir {
        std::fs::create_dir_all(dir)?;
        write_lp(&w.lp, std::io::BufWriter::new(std::fs::File::create(dir.join(format!("window_{t}.lp")))?))?;
    }
    let sol = solver.solve(&w.lp).map_err(|source| DispatchError::Solver { t, source })?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(DispatchError::Infeasible { t }),
        LpStatus::Unbounded => return Err(DispatchError::Unbounded { t }),
    }
    let rec = extract(&w, views, problem, &sol);
    if !rec.kkt.within(tol) {
        return Err(DispatchError::Kkt {
            t,
            what: format!("{:?}", rec.kkt),
            residual: rec.kkt.stationarity.max(rec.kkt.complementarity).max(rec.kkt.primal_infeasibility),
        });
    }
    for (v, r) in views.iter().zip(&rec.resources) {
        let (d, c) = r.stationarity(rec.lambda);
        let worst = d.abs().max(c.abs());
        if worst > tol.kkt * (1.0 + rec.lambda.abs()) {
            return Err(DispatchError::Kkt {
                t,
                what: format!("binding stationarity of `{}`", v.spec.id),
                residual: worst,
            });
        }
    }
    Ok(rec)
}

pub fn solve_window(views: &[ResourceView], problem: &WindowProblem, opts: &DispatchOptions) -> Result<BindingRecord, DispatchError> {
    solve_window_with(&DualSimplex::with_tolerances(opts.tolerances), views, problem, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Serialize)]
pub struct DispatchTrace {
    pub records: Vec<BindingRecord>,
    pub demand: Vec<f64>,
    /// Binding intervals where a resource that satisfies the cost-order
    /// condition charged and discharged at once.
    pub simultaneous: usize,
    /// Scenario demands clipped at zero.
    pub clipped: usize,
}

impl DispatchTrace {
    pub fn dispatch_d(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.resources[i].g_d).collect()
    }

    pub fn dispatch_c(&self, i: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.resources[i].g_c).collect()
    }

    pub fn lmp(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lambda).collect()
    }
}

pub fn roll_horizon(
    fleet: &Fleet,
    demand: &[f64],
    forecast: &dyn ForecastProvider,
    mode: DispatchMode,
    opts: &DispatchOptions,
) -> Result<DispatchTrace, DispatchError> {
    roll_horizon_with(&DualSimplex::with_tolerances(opts.tolerances), fleet, demand, forecast, mode, opts)
}

/// Rolls the window over `demand`, committing each binding interval and
/// threading its dispatch and SOC into the next window.
pub fn roll_horizon_with(
    solver: &dyn LpSolver,
    fleet: &Fleet,
    demand: &[f64],
    forecast: &dyn ForecastProvider,
    mode: DispatchMode,
    opts: &DispatchOptions,
) -> Result<DispatchTrace, DispatchError> {
    if fleet.window == 0 {
        return Err(DispatchError::Input("window must be at least 1".into()));
    }
    let views: Vec<ResourceView> = fleet.resources.iter().map(|r| r.bid_view()).collect();
    let mut boundary: Vec<Boundary> = fleet.resources.iter().map(|r| Boundary::initial(&r.truth)).collect();
    let mut trace = DispatchTrace {
        records: Vec::with_capacity(demand.len()),
        demand: demand.to_vec(),
        simultaneous: 0,
        clipped: 0,
    };
    for t in 0..demand.len() {
        let scenarios = match mode {
            DispatchMode::Stochastic => forecast.scenarios(demand, t, fleet.window),
            DispatchMode::Deterministic => forecast.point_forecast(demand, t, fleet.window),
        };
        trace.clipped += scenarios.clipped;
        let problem = WindowProblem {
            t,
            scenarios,
            boundary: boundary.clone(),
        };
        let rec = solve_window_with(solver, &views, &problem, opts)?;
        for (i, (v, r)) in views.iter().zip(&rec.resources).enumerate() {
            if v.spec.satisfies_cost_order() && r.g_d * r.g_c > opts.tolerances.feas {
                log::debug!("interval {}: `{}` charges and discharges at once", t + 1, v.spec.id);
                trace.simultaneous += 1;
            }
            boundary[i] = Boundary {
                soc: r.soc,
                g_d: r.g_d,
                g_c: r.g_c,
            };
        }
        log::debug!("interval {}: lambda {:.4}, {} iterations", t + 1, rec.lambda, rec.iterations);
        trace.records.push(rec);
    }
    Ok(trace)
}
