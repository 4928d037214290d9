//! Bounded dual simplex over an explicit dense basis inverse.
//!
//! Every row `lo <= a'x <= hi` gets a logical variable `s` with
//! `a'x - s = 0` and bounds `[lo, hi]`, so the working matrix is
//! `[A | -I]` with a zero right-hand side and the all-logical start basis has
//! inverse `-I`. Nonbasic variables start at the bound matching the sign of
//! their reduced cost, which makes the start dual feasible; variables that
//! would need an infinite bound get an artificial box that is enlarged and
//! retried if it turns out to be active at the optimum.
//!
//! Rows with a single nonzero are folded into variable bounds before the
//! simplex runs. Their duals are recovered from the reduced cost of the
//! variable. When a singleton row implies exactly the same bound as the
//! variable already has, the variable's own bound keeps the multiplier.

use super::{LinearProgram, LpSolution, LpSolver, LpStatus, SolverError, Tolerances};

const PIVOT_TOL: f64 = 1e-9;
const HARRIS_TOL: f64 = 1e-9;
const INITIAL_BIG_M: f64 = 1e7;
const MAX_BIG_M: f64 = 1e13;
const REFRESH_EVERY: usize = 64;

/// The bundled LP engine.
#[derive(Debug, Clone)]
pub struct DualSimplex {
    pub tolerances: Tolerances,
    /// Iteration cap. `None` scales with the problem size.
    pub max_iterations: Option<usize>,
    /// Consecutive degenerate pivots tolerated before switching to Bland's
    /// rule.
    pub bland_threshold: usize,
}

impl Default for DualSimplex {
    fn default() -> Self {
        DualSimplex {
            tolerances: Tolerances::default(),
            max_iterations: None,
            bland_threshold: 50,
        }
    }
}

impl DualSimplex {
    pub fn with_tolerances(tolerances: Tolerances) -> Self {
        DualSimplex {
            tolerances,
            ..Self::default()
        }
    }
}

impl LpSolver for DualSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, SolverError> {
        let pre = match Presolved::new(lp, &self.tolerances) {
            Some(p) => p,
            None => return Ok(LpSolution::non_optimal(LpStatus::Infeasible, lp, 0)),
        };
        let mut big_m = INITIAL_BIG_M;
        let mut iterations = 0;
        // Set once a boxed attempt reaches an optimum: boxed feasibility
        // implies feasibility of the original problem.
        let mut feasible = false;
        loop {
            let mut engine = Engine::new(&pre, self, big_m)?;
            let outcome = engine.run();
            iterations += engine.iters;
            let outcome = outcome?;
            let retry = big_m < MAX_BIG_M && engine.uses_artificial();
            match outcome {
                Outcome::Optimal => return Ok(pre.postsolve(lp, &engine, iterations)),
                Outcome::Infeasible if feasible => {
                    return Ok(LpSolution::non_optimal(LpStatus::Unbounded, lp, iterations))
                }
                Outcome::Infeasible if retry => {}
                Outcome::Infeasible => {
                    return Ok(LpSolution::non_optimal(LpStatus::Infeasible, lp, iterations))
                }
                Outcome::ArtificialActive if retry => feasible = true,
                Outcome::ArtificialActive => {
                    return Ok(LpSolution::non_optimal(LpStatus::Unbounded, lp, iterations))
                }
            }
            log::debug!("artificial bound {big_m:e} active, retrying larger");
            big_m *= 1e3;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Own,
    Row(usize, f64),
}

/// Problem after singleton and empty rows have been removed.
struct Presolved {
    n: usize,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    lo_src: Vec<Source>,
    up_src: Vec<Source>,
    /// Original index of each kept row.
    kept: Vec<usize>,
    row_lo: Vec<f64>,
    row_up: Vec<f64>,
    row_start: Vec<usize>,
    row_col: Vec<usize>,
    row_val: Vec<f64>,
}

fn ties(a: f64, b: f64) -> bool {
    a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

impl Presolved {
    /// Returns `None` when presolve alone proves infeasibility.
    fn new(lp: &LinearProgram, tol: &Tolerances) -> Option<Self> {
        let n = lp.num_vars();
        let mut pre = Presolved {
            n,
            cost: lp.vars().iter().map(|v| v.cost).collect(),
            lower: lp.vars().iter().map(|v| v.lower).collect(),
            upper: lp.vars().iter().map(|v| v.upper).collect(),
            lo_src: vec![Source::Own; n],
            up_src: vec![Source::Own; n],
            kept: Vec::new(),
            row_lo: Vec::new(),
            row_up: Vec::new(),
            row_start: vec![0],
            row_col: Vec::new(),
            row_val: Vec::new(),
        };
        let mut merged: Vec<(usize, f64)> = Vec::new();
        for (r, row) in lp.rows().iter().enumerate() {
            merged.clear();
            merged.extend(row.coeffs.iter().map(|&(v, a)| (v.0, a)));
            merged.sort_by_key(|e| e.0);
            merged.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            merged.retain(|e| e.1 != 0.0);

            if row.lower == f64::NEG_INFINITY && row.upper == f64::INFINITY {
                continue;
            }
            match merged.len() {
                0 => {
                    if row.lower > tol.feas || row.upper < -tol.feas {
                        return None;
                    }
                }
                1 => {
                    let (j, a) = merged[0];
                    let (lo, hi) = if a > 0.0 {
                        (row.lower / a, row.upper / a)
                    } else {
                        (row.upper / a, row.lower / a)
                    };
                    if lo > pre.lower[j] && !ties(lo, pre.lower[j]) {
                        pre.lower[j] = lo;
                        pre.lo_src[j] = Source::Row(r, a);
                    }
                    if hi < pre.upper[j] && !ties(hi, pre.upper[j]) {
                        pre.upper[j] = hi;
                        pre.up_src[j] = Source::Row(r, a);
                    }
                }
                _ => {
                    pre.kept.push(r);
                    pre.row_lo.push(row.lower);
                    pre.row_up.push(row.upper);
                    for &(j, a) in &merged {
                        pre.row_col.push(j);
                        pre.row_val.push(a);
                    }
                    pre.row_start.push(pre.row_col.len());
                }
            }
        }
        for j in 0..n {
            let (l, u) = (pre.lower[j], pre.upper[j]);
            if l > u {
                if l - u > tol.feas * (1.0 + l.abs().max(u.abs())) {
                    return None;
                }
                let mid = 0.5 * (l + u);
                pre.lower[j] = mid;
                pre.upper[j] = mid;
            }
        }
        Some(pre)
    }

    fn postsolve(&self, lp: &LinearProgram, eng: &Engine, iterations: usize) -> LpSolution {
        let n = self.n;
        let x: Vec<f64> = eng.x[..n].to_vec();
        let mut row_duals = vec![0.0; lp.num_rows()];
        for (k, &r) in self.kept.iter().enumerate() {
            row_duals[r] = eng.y[k];
        }
        let mut reduced_costs = vec![0.0; n];
        for j in 0..n {
            let dj = if matches!(eng.state[j], State::Basic(_)) { 0.0 } else { eng.d[j] };
            let src = if dj > 0.0 {
                self.lo_src[j]
            } else if dj < 0.0 {
                self.up_src[j]
            } else {
                continue;
            };
            match src {
                Source::Own => reduced_costs[j] = dj,
                Source::Row(r, a) => row_duals[r] += dj / a,
            }
        }
        LpSolution {
            status: LpStatus::Optimal,
            objective: lp.objective_value(&x),
            x,
            row_duals,
            reduced_costs,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic(usize),
    Lower,
    Upper,
    /// Free nonbasic variable held at zero.
    Zero,
}

enum Outcome {
    Optimal,
    Infeasible,
    ArtificialActive,
}

enum Phase {
    Feasible,
    Infeasible,
}

struct Engine<'a> {
    pre: &'a Presolved,
    opts: &'a DualSimplex,
    n: usize,
    m: usize,
    col_start: Vec<usize>,
    col_row: Vec<usize>,
    col_val: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    up: Vec<f64>,
    art_lo: Vec<bool>,
    art_up: Vec<bool>,
    state: Vec<State>,
    head: Vec<usize>,
    x: Vec<f64>,
    d: Vec<f64>,
    y: Vec<f64>,
    binv: Vec<f64>,
    iters: usize,
    max_iters: usize,
    alpha_r: Vec<f64>,
    alpha_q: Vec<f64>,
    scratch: Vec<f64>,
    pivot_row: Vec<(usize, f64)>,
}

impl<'a> Engine<'a> {
    fn new(pre: &'a Presolved, opts: &'a DualSimplex, big_m: f64) -> Result<Self, SolverError> {
        let n = pre.n;
        let m = pre.kept.len();
        let mut counts = vec![0usize; n + 1];
        for &j in &pre.row_col {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let col_start = counts.clone();
        let mut fill = counts;
        let mut col_row = vec![0; pre.row_col.len()];
        let mut col_val = vec![0.0; pre.row_col.len()];
        for i in 0..m {
            for k in pre.row_start[i]..pre.row_start[i + 1] {
                let j = pre.row_col[k];
                col_row[fill[j]] = i;
                col_val[fill[j]] = pre.row_val[k];
                fill[j] += 1;
            }
        }

        let total = n + m;
        let mut cost = pre.cost.clone();
        cost.resize(total, 0.0);
        let mut lo = pre.lower.clone();
        lo.extend_from_slice(&pre.row_lo);
        let mut up = pre.upper.clone();
        up.extend_from_slice(&pre.row_up);

        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = -1.0;
        }
        let mut state = vec![State::Lower; total];
        let mut head = Vec::with_capacity(m);
        for i in 0..m {
            state[n + i] = State::Basic(i);
            head.push(n + i);
        }
        let max_iters = opts.max_iterations.unwrap_or(1000 + 50 * (total + m));
        let mut eng = Engine {
            pre,
            opts,
            n,
            m,
            col_start,
            col_row,
            col_val,
            cost,
            lo,
            up,
            art_lo: vec![false; total],
            art_up: vec![false; total],
            state,
            head,
            x: vec![0.0; total],
            d: vec![0.0; total],
            y: vec![0.0; m],
            binv,
            iters: 0,
            max_iters,
            alpha_r: vec![0.0; total],
            alpha_q: vec![0.0; m],
            scratch: vec![0.0; m],
            pivot_row: Vec::with_capacity(m),
        };
        eng.crash_free_columns();
        eng.compute_duals();
        eng.place_nonbasics(big_m);
        eng.compute_primal();
        Ok(eng)
    }

    fn uses_artificial(&self) -> bool {
        self.art_lo.iter().chain(&self.art_up).any(|&a| a)
    }

    fn for_col(&self, j: usize, mut f: impl FnMut(usize, f64)) {
        if j < self.n {
            for k in self.col_start[j]..self.col_start[j + 1] {
                f(self.col_row[k], self.col_val[k]);
            }
        } else {
            f(j - self.n, -1.0);
        }
    }

    /// `alpha_q = B^-1 a_j`.
    fn ftran(&mut self, j: usize) {
        let m = self.m;
        self.alpha_q.iter_mut().for_each(|v| *v = 0.0);
        let mut entries = Vec::with_capacity(4);
        self.for_col(j, |i, a| entries.push((i, a)));
        for (i, a) in entries {
            for k in 0..m {
                self.alpha_q[k] += self.binv[k * m + i] * a;
            }
        }
    }

    /// Row `r` of `B^-1 [A | -I]`, stored in `alpha_r` for every column.
    fn compute_pivot_row(&mut self, r: usize) {
        let m = self.m;
        let n = self.n;
        self.alpha_r.iter_mut().for_each(|v| *v = 0.0);
        let rho = &self.binv[r * m..(r + 1) * m];
        for (i, &rv) in rho.iter().enumerate() {
            if rv == 0.0 {
                continue;
            }
            for k in self.pre.row_start[i]..self.pre.row_start[i + 1] {
                self.alpha_r[self.pre.row_col[k]] += rv * self.pre.row_val[k];
            }
            self.alpha_r[n + i] = -rv;
        }
    }

    /// Replaces the basic variable at position `r` by `q`, using the
    /// column currently in `alpha_q`.
    fn update_inverse(&mut self, r: usize, q: usize) {
        let m = self.m;
        let piv = self.alpha_q[r];
        self.pivot_row.clear();
        for k in 0..m {
            let v = self.binv[r * m + k];
            if v != 0.0 {
                let v = v / piv;
                self.binv[r * m + k] = v;
                self.pivot_row.push((k, v));
            }
        }
        for i in 0..m {
            let f = self.alpha_q[i];
            if i == r || f == 0.0 {
                continue;
            }
            let row = &mut self.binv[i * m..(i + 1) * m];
            for &(k, v) in &self.pivot_row {
                row[k] -= f * v;
            }
        }
        let p = self.head[r];
        self.head[r] = q;
        self.state[q] = State::Basic(r);
        if let State::Basic(_) = self.state[p] {
            self.state[p] = State::Lower;
        }
    }

    fn crash_free_columns(&mut self) {
        for j in 0..self.n {
            if self.lo[j] != f64::NEG_INFINITY || self.up[j] != f64::INFINITY {
                continue;
            }
            self.ftran(j);
            let mut best: Option<(usize, f64)> = None;
            for k in 0..self.m {
                if self.head[k] < self.n {
                    continue;
                }
                let a = self.alpha_q[k].abs();
                if a > 1e-7 && best.is_none_or(|(_, b)| a > b) {
                    best = Some((k, a));
                }
            }
            if let Some((r, _)) = best {
                self.update_inverse(r, j);
            }
        }
    }

    /// `y' = c_B' B^-1` and reduced costs of every column.
    fn compute_duals(&mut self) {
        let m = self.m;
        self.y.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            let cb = self.cost[self.head[k]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.binv[k * m..(k + 1) * m];
            for (yi, &b) in self.y.iter_mut().zip(row) {
                *yi += cb * b;
            }
        }
        self.refine_duals();
        self.compute_reduced_costs();
    }

    fn compute_reduced_costs(&mut self) {
        for j in 0..self.n + self.m {
            self.d[j] = match self.state[j] {
                State::Basic(_) => 0.0,
                _ => {
                    let mut dj = self.cost[j];
                    let y = &self.y;
                    self.for_col(j, |i, a| dj -= a * y[i]);
                    dj
                }
            };
        }
    }

    /// One step of iterative refinement on `B'y = c_B`.
    fn refine_duals(&mut self) {
        let m = self.m;
        let mut res = std::mem::take(&mut self.scratch);
        for k in 0..m {
            let j = self.head[k];
            let mut r = self.cost[j];
            let y = &self.y;
            self.for_col(j, |i, a| r -= a * y[i]);
            res[k] = r;
        }
        for k in 0..m {
            let rk = res[k];
            if rk == 0.0 {
                continue;
            }
            let row = &self.binv[k * m..(k + 1) * m];
            for (yi, &b) in self.y.iter_mut().zip(row) {
                *yi += rk * b;
            }
        }
        for k in 0..m {
            if self.head[k] >= self.n {
                self.y[self.head[k] - self.n] = 0.0;
            }
        }
        self.scratch = res;
    }

    fn place_nonbasics(&mut self, big_m: f64) {
        for j in 0..self.n + self.m {
            if let State::Basic(_) = self.state[j] {
                continue;
            }
            let dj = self.d[j];
            let (l, u) = (self.lo[j], self.up[j]);
            self.state[j] = match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    if dj >= 0.0 {
                        State::Lower
                    } else {
                        State::Upper
                    }
                }
                (true, false) => {
                    if dj >= 0.0 {
                        State::Lower
                    } else {
                        self.up[j] = l.max(0.0) + big_m;
                        self.art_up[j] = true;
                        State::Upper
                    }
                }
                (false, true) => {
                    if dj <= 0.0 {
                        State::Upper
                    } else {
                        self.lo[j] = u.min(0.0) - big_m;
                        self.art_lo[j] = true;
                        State::Lower
                    }
                }
                (false, false) => {
                    if dj > 0.0 {
                        self.lo[j] = -big_m;
                        self.art_lo[j] = true;
                        State::Lower
                    } else if dj < 0.0 {
                        self.up[j] = big_m;
                        self.art_up[j] = true;
                        State::Upper
                    } else {
                        State::Zero
                    }
                }
            };
        }
    }

    /// Sets nonbasic values from their state and solves for `x_B`, with one
    /// refinement step.
    fn compute_primal(&mut self) {
        for j in 0..self.n + self.m {
            match self.state[j] {
                State::Lower => self.x[j] = self.lo[j],
                State::Upper => self.x[j] = self.up[j],
                State::Zero => self.x[j] = 0.0,
                State::Basic(_) => self.x[j] = 0.0,
            }
        }
        for _ in 0..2 {
            let res = self.row_residuals();
            let m = self.m;
            for k in 0..m {
                let row = &self.binv[k * m..(k + 1) * m];
                let dx: f64 = row.iter().zip(&res).map(|(b, r)| b * r).sum();
                self.x[self.head[k]] -= dx;
            }
        }
    }

    /// `[A | -I] x` per row.
    fn row_residuals(&self) -> Vec<f64> {
        let mut res = vec![0.0; self.m];
        for (i, r) in res.iter_mut().enumerate() {
            let mut s = -self.x[self.n + i];
            for k in self.pre.row_start[i]..self.pre.row_start[i + 1] {
                s += self.pre.row_val[k] * self.x[self.pre.row_col[k]];
            }
            *r = s;
        }
        res
    }

    fn ptol(&self, b: f64) -> f64 {
        1e-9 * (1.0 + b.abs())
    }

    fn run(&mut self) -> Result<Outcome, SolverError> {
        for _round in 0..20 {
            match self.dual_phase()? {
                Phase::Infeasible => return Ok(Outcome::Infeasible),
                Phase::Feasible => {}
            }
            self.compute_primal();
            self.compute_duals();
            if self.max_primal_infeasibility() > 0.0 {
                continue;
            }
            if self.has_dual_infeasibility(self.opts.tolerances.dual * 0.1) {
                self.primal_phase()?;
                self.compute_primal();
                self.compute_duals();
                if self.max_primal_infeasibility() > 0.0
                    || self.has_dual_infeasibility(self.opts.tolerances.dual)
                {
                    continue;
                }
            }
            return Ok(self.finish());
        }
        Err(SolverError::Numerical("simplex failed to settle".into()))
    }

    fn finish(&self) -> Outcome {
        for j in 0..self.n + self.m {
            match self.state[j] {
                State::Lower if self.art_lo[j] => return Outcome::ArtificialActive,
                State::Upper if self.art_up[j] => return Outcome::ArtificialActive,
                _ => {}
            }
        }
        Outcome::Optimal
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let x = self.x[j];
        if x < self.lo[j] - self.ptol(self.lo[j]) {
            self.lo[j] - x
        } else if x > self.up[j] + self.ptol(self.up[j]) {
            x - self.up[j]
        } else {
            0.0
        }
    }

    fn max_primal_infeasibility(&self) -> f64 {
        self.head.iter().map(|&j| self.infeasibility(j)).fold(0.0, f64::max)
    }

    fn has_dual_infeasibility(&self, tol: f64) -> bool {
        (0..self.n + self.m).any(|j| self.dual_infeasibility(j) > tol)
    }

    fn dual_infeasibility(&self, j: usize) -> f64 {
        let dj = self.d[j];
        match self.state[j] {
            State::Basic(_) => 0.0,
            _ if self.lo[j] == self.up[j] => 0.0,
            State::Lower => (-dj).max(0.0),
            State::Upper => dj.max(0.0),
            State::Zero => dj.abs(),
        }
    }

    fn choose_leaving(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.m {
            let inf = self.infeasibility(self.head[r]);
            if inf <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, binf)) => {
                    if bland {
                        self.head[r] < self.head[b]
                    } else {
                        inf > binf
                    }
                }
            };
            if better {
                best = Some((r, inf));
            }
        }
        best.map(|b| b.0)
    }

    fn check_iterations(&self) -> Result<(), SolverError> {
        if self.iters >= self.max_iters {
            Err(SolverError::IterationLimit(self.max_iters))
        } else {
            Ok(())
        }
    }

    fn dual_phase(&mut self) -> Result<Phase, SolverError> {
        let mut degenerate = 0usize;
        let mut troubles = 0usize;
        let mut since_refresh = 0usize;
        let mut fresh = false;
        loop {
            self.check_iterations()?;
            let bland = degenerate > self.opts.bland_threshold;
            let Some(r) = self.choose_leaving(bland) else {
                return Ok(Phase::Feasible);
            };
            let p = self.head[r];
            let to_lower = self.x[p] < self.lo[p];
            let delta = if to_lower { 1.0 } else { -1.0 };
            self.compute_pivot_row(r);

            let Some((q, theta)) = self.dual_ratio_test(delta, bland) else {
                if fresh {
                    return Ok(Phase::Infeasible);
                }
                // Drift in x_B can fake an infeasibility; decide on fresh values.
                fresh = true;
                self.compute_primal();
                self.compute_duals();
                continue;
            };
            fresh = false;

            self.ftran(q);
            let piv = self.alpha_q[r];
            if piv.abs() < PIVOT_TOL || (piv - self.alpha_r[q]).abs() > 1e-6 * (1.0 + piv.abs()) {
                troubles += 1;
                if troubles > 3 {
                    return Err(SolverError::Numerical(format!(
                        "unstable pivot {piv:e} vs {:e}",
                        self.alpha_r[q]
                    )));
                }
                self.reinvert()?;
                self.compute_primal();
                self.compute_duals();
                continue;
            }

            for j in 0..self.n + self.m {
                if matches!(self.state[j], State::Basic(_)) {
                    continue;
                }
                let a = self.alpha_r[j];
                if a != 0.0 {
                    self.d[j] += theta * delta * a;
                }
            }
            self.d[q] = 0.0;
            self.d[p] = delta * theta;

            let target = if to_lower { self.lo[p] } else { self.up[p] };
            let step = (self.x[p] - target) / piv;
            for k in 0..self.m {
                let a = self.alpha_q[k];
                if a != 0.0 {
                    self.x[self.head[k]] -= step * a;
                }
            }
            self.x[q] += step;
            self.x[p] = target;
            self.update_inverse(r, q);
            self.state[p] = if to_lower { State::Lower } else { State::Upper };
            self.iters += 1;

            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            since_refresh += 1;
            if since_refresh >= REFRESH_EVERY {
                since_refresh = 0;
                self.compute_primal();
                self.compute_duals();
            }
        }
    }

    /// Harris two-pass ratio test on the pivot row. Returns the entering
    /// column and the dual step length.
    fn dual_ratio_test(&self, delta: f64, bland: bool) -> Option<(usize, f64)> {
        // (column, ratio, |beta|, harris bound)
        let candidate = |j: usize| -> Option<(f64, f64, f64)> {
            let st = self.state[j];
            if matches!(st, State::Basic(_)) || self.lo[j] == self.up[j] {
                return None;
            }
            let beta = delta * self.alpha_r[j];
            if beta.abs() < PIVOT_TOL {
                return None;
            }
            let dj = self.d[j];
            match st {
                State::Lower if beta < 0.0 => {
                    Some((dj / -beta, -beta, (dj + HARRIS_TOL) / -beta))
                }
                State::Upper if beta > 0.0 => Some((-dj / beta, beta, (-dj + HARRIS_TOL) / beta)),
                State::Zero => Some((0.0, beta.abs(), HARRIS_TOL / beta.abs())),
                _ => None,
            }
        };
        let total = self.n + self.m;
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..total {
                if let Some((ratio, _, _)) = candidate(j) {
                    let ratio = ratio.max(0.0);
                    if best.is_none_or(|(_, b)| ratio < b - 1e-12) {
                        best = Some((j, ratio));
                    }
                }
            }
            return best;
        }
        let mut bound = f64::INFINITY;
        for j in 0..total {
            if let Some((_, _, h)) = candidate(j) {
                bound = bound.min(h);
            }
        }
        if bound == f64::INFINITY {
            return None;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..total {
            if let Some((ratio, mag, _)) = candidate(j) {
                if ratio <= bound && best.is_none_or(|(_, _, b)| mag > b) {
                    best = Some((j, ratio, mag));
                }
            }
        }
        best.map(|(j, ratio, _)| (j, ratio.max(0.0)))
    }

    /// Bounded primal simplex used to remove residual dual infeasibilities
    /// from a primal feasible basis.
    fn primal_phase(&mut self) -> Result<(), SolverError> {
        let dtol = self.opts.tolerances.dual * 0.1;
        let mut degenerate = 0usize;
        loop {
            self.check_iterations()?;
            let bland = degenerate > self.opts.bland_threshold;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n + self.m {
                let inf = self.dual_infeasibility(j);
                if inf > dtol && entering.is_none_or(|(_, b)| !bland && inf > b) {
                    entering = Some((j, inf));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            let sigma = if self.d[q] < 0.0 { 1.0 } else { -1.0 };
            self.ftran(q);

            let mut t_best = self.up[q] - self.lo[q];
            let mut leave: Option<(usize, f64, bool)> = None;
            for k in 0..self.m {
                let a = sigma * self.alpha_q[k];
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let j = self.head[k];
                let (t, to_lower) = if a > 0.0 {
                    if self.lo[j] == f64::NEG_INFINITY {
                        continue;
                    }
                    (((self.x[j] - self.lo[j]) / a).max(0.0), true)
                } else {
                    if self.up[j] == f64::INFINITY {
                        continue;
                    }
                    (((self.up[j] - self.x[j]) / -a).max(0.0), false)
                };
                let better = match leave {
                    None => t < t_best,
                    Some((b, _, _)) => {
                        t < t_best - 1e-12
                            || (t <= t_best + 1e-12 && a.abs() > (sigma * self.alpha_q[b]).abs())
                    }
                };
                if better {
                    t_best = t;
                    leave = Some((k, t, to_lower));
                }
            }
            if t_best == f64::INFINITY {
                return Err(SolverError::Numerical("unbounded ray in primal cleanup".into()));
            }
            self.iters += 1;
            let step = sigma * t_best;
            for k in 0..self.m {
                let a = self.alpha_q[k];
                if a != 0.0 {
                    self.x[self.head[k]] -= step * a;
                }
            }
            self.x[q] += step;
            if t_best <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            match leave {
                None => {
                    self.state[q] = if sigma > 0.0 { State::Upper } else { State::Lower };
                    self.x[q] = if sigma > 0.0 { self.up[q] } else { self.lo[q] };
                }
                Some((r, _, to_lower)) => {
                    let p = self.head[r];
                    self.compute_pivot_row(r);
                    let ratio = self.d[q] / self.alpha_r[q];
                    for j in 0..self.n + self.m {
                        if matches!(self.state[j], State::Basic(_)) {
                            continue;
                        }
                        let a = self.alpha_r[j];
                        if a != 0.0 {
                            self.d[j] -= ratio * a;
                        }
                    }
                    self.d[q] = 0.0;
                    self.d[p] = -ratio;
                    self.x[p] = if to_lower { self.lo[p] } else { self.up[p] };
                    self.update_inverse(r, q);
                    self.state[p] = if to_lower { State::Lower } else { State::Upper };
                }
            }
        }
    }

    /// Rebuilds `B^-1` by Gauss-Jordan elimination with partial pivoting.
    fn reinvert(&mut self) -> Result<(), SolverError> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for k in 0..m {
            let j = self.head[k];
            let mut entries = Vec::new();
            self.for_col(j, |i, a| entries.push((i, a)));
            for (i, a) in entries {
                b[i * m + k] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let mut piv_row = c;
            let mut piv = 0.0f64;
            for i in c..m {
                if b[i * m + c].abs() > piv.abs() {
                    piv = b[i * m + c];
                    piv_row = i;
                }
            }
            if piv.abs() < 1e-11 {
                return Err(SolverError::Numerical("singular basis".into()));
            }
            if piv_row != c {
                for k in 0..m {
                    b.swap(c * m + k, piv_row * m + k);
                    inv.swap(c * m + k, piv_row * m + k);
                }
            }
            for k in 0..m {
                b[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for i in 0..m {
                if i == c {
                    continue;
                }
                let f = b[i * m + c];
                if f == 0.0 {
                    continue;
                }
                for k in 0..m {
                    b[i * m + k] -= f * b[c * m + k];
                    inv[i * m + k] -= f * inv[c * m + k];
                }
            }
        }
        self.binv = inv;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{solve, LinearProgram, LpStatus, RowBounds, Tag};

    #[test]
    fn lower_bound_dual_is_unit_cost() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), 1.0, 3.0, f64::INFINITY).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert_eq!(s.value(x), 3.0);
        assert_eq!(s.bound_dual(x).lower, 1.0);
    }

    #[test]
    fn ge_row_dual_is_unit_cost() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), 1.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let y = lp.add_var(Tag::named("y"), 0.0, 0.0, 0.0).unwrap();
        let r = lp
            .add_row(Tag::named("floor"), vec![(x, 1.0), (y, 1.0)], RowBounds::Ge(3.0))
            .unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value(x) - 3.0).abs() < 1e-12);
        assert!((s.row_dual(r).lower - 1.0).abs() < 1e-12);
        assert_eq!(s.row_dual(r).upper, 0.0);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), -1.0, 0.0, f64::INFINITY).unwrap();
        let y = lp.add_var(Tag::named("y"), 0.0, 0.0, f64::INFINITY).unwrap();
        lp.add_row(Tag::named("r"), vec![(x, 1.0), (y, -1.0)], RowBounds::Le(1.0))
            .unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn infeasible_rows_detected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), 1.0, 0.0, 10.0).unwrap();
        let y = lp.add_var(Tag::named("y"), 1.0, 0.0, 10.0).unwrap();
        lp.add_row(Tag::named("r"), vec![(x, 1.0), (y, 1.0)], RowBounds::Ge(25.0))
            .unwrap();
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn singleton_rows_carry_their_dual() {
        // min x with x >= 2 written as a row; the row, not the bound, binds.
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), 1.0, 0.0, 10.0).unwrap();
        let r = lp.add_row(Tag::named("r"), vec![(x, 2.0)], RowBounds::Ge(4.0)).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.value(x), 2.0);
        assert!((s.row_dual(r).lower - 0.5).abs() < 1e-12);
        assert_eq!(s.bound_dual(x).lower, 0.0);
    }

    #[test]
    fn singleton_tie_goes_to_variable_bound() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), -1.0, 0.0, 1.0).unwrap();
        let r = lp.add_row(Tag::named("r"), vec![(x, 1.0)], RowBounds::Le(1.0)).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.value(x), 1.0);
        assert_eq!(s.row_duals[r.0], 0.0);
        assert_eq!(s.bound_dual(x).upper, 1.0);
    }

    #[test]
    fn free_variable_crash() {
        // min x + y, x - y = 1, x + y >= 3 with x, y free: optimum x=2, y=1.
        let mut lp = LinearProgram::new();
        let inf = f64::INFINITY;
        let x = lp.add_var(Tag::named("x"), 1.0, -inf, inf).unwrap();
        let y = lp.add_var(Tag::named("y"), 1.0, -inf, inf).unwrap();
        let e = lp.add_row(Tag::named("e"), vec![(x, 1.0), (y, -1.0)], RowBounds::Eq(1.0)).unwrap();
        let g = lp.add_row(Tag::named("g"), vec![(x, 1.0), (y, 1.0)], RowBounds::Ge(3.0)).unwrap();
        let s = solve(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.value(x) - 2.0).abs() < 1e-12);
        assert!((s.value(y) - 1.0).abs() < 1e-12);
        assert!(s.eq_dual(e).abs() < 1e-12);
        assert!((s.row_dual(g).lower - 1.0).abs() < 1e-12);
    }
}
