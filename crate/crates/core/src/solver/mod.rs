//! Linear programs with tagged rows and bounds, a bundled dual simplex
//! solver, and a KKT residual checker.
//!
//! Problems are stated in minimization form:
//!
//! ```text
//! minimize    c'x + offset
//! subject to  lo_r <= a_r'x <= hi_r   for every row r
//!             l_j  <= x_j   <= u_j    for every variable j
//! ```
//!
//! Dual values follow a fixed sign convention: for every inequality the
//! reported multiplier pair `(lower, upper)` is non-negative, `lower` being
//! the multiplier of the `>=` side and `upper` that of the `<=` side. The
//! signed row dual is `lower - upper`, so that stationarity reads
//! `c - A'y - z = 0` with `z` the signed bound multipliers.

mod kkt;
mod lp_format;
mod simplex;

pub use kkt::{kkt_residuals, KktReport};
pub use lp_format::write_lp;
pub use simplex::DualSimplex;

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Solver tolerances. All values are absolute; problems are expected to be
/// scaled so that demands are of order 10^2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tolerances {
    /// Primal feasibility.
    pub feas: f64,
    /// Stationarity, complementarity and duality gap.
    pub kkt: f64,
    /// Sign tolerance on dual values of inequalities.
    pub dual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feas: 1e-7,
            kkt: 1e-6,
            dual: 1e-7,
        }
    }
}

/// Symbolic name of a row or variable, e.g. `balance[3]` or `ramp_d[1,4,7]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    group: Cow<'static, str>,
    index: [usize; 3],
    arity: u8,
}

impl Tag {
    /// A tag without indices.
    pub fn named(group: impl Into<Cow<'static, str>>) -> Self {
        Tag {
            group: group.into(),
            index: [0; 3],
            arity: 0,
        }
    }

    /// A tag with up to three indices.
    pub fn at(group: &'static str, index: &[usize]) -> Self {
        assert!(index.len() <= 3, "tags carry at most three indices");
        let mut idx = [0; 3];
        idx[..index.len()].copy_from_slice(index);
        Tag {
            group: Cow::Borrowed(group),
            index: idx,
            arity: index.len() as u8,
        }
    }

    pub fn group(&self) -> &str {
        &self.group
    }

    pub fn indices(&self) -> &[usize] {
        &self.index[..self.arity as usize]
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.group)?;
        if self.arity > 0 {
            f.write_str("[")?;
            for (n, i) in self.indices().iter().enumerate() {
                if n > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{i}")?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId(pub usize);

/// Two-sided bounds on a row activity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowBounds {
    Eq(f64),
    Le(f64),
    Ge(f64),
    Range(f64, f64),
}

impl RowBounds {
    fn interval(self) -> (f64, f64) {
        match self {
            RowBounds::Eq(b) => (b, b),
            RowBounds::Le(b) => (f64::NEG_INFINITY, b),
            RowBounds::Ge(b) => (b, f64::INFINITY),
            RowBounds::Range(lo, hi) => (lo, hi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub tag: Tag,
    pub cost: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub tag: Tag,
    pub coeffs: Vec<(VarId, f64)>,
    pub lower: f64,
    pub upper: f64,
}

impl Row {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(v, a)| a * x[v.0]).sum()
    }

    pub fn is_equality(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("duplicate tag `{0}`")]
    DuplicateTag(String),
    #[error("non-finite coefficient in `{0}`")]
    NonFinite(String),
    #[error("row `{0}` references unknown variable {1}")]
    UnknownVariable(String, usize),
    #[error("empty interval on `{0}`: lower {1} > upper {2}")]
    EmptyInterval(String, f64, f64),
}

/// A linear program whose rows and variables all carry unique tags.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    vars: Vec<Variable>,
    rows: Vec<Row>,
    offset: f64,
    var_tags: HashMap<Tag, VarId>,
    row_tags: HashMap<Tag, RowId>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with bounds `[lower, upper]` (infinite values allowed).
    pub fn add_var(&mut self, tag: Tag, cost: f64, lower: f64, upper: f64) -> Result<VarId, LpError> {
        if !cost.is_finite() || lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(LpError::NonFinite(tag.to_string()));
        }
        if lower > upper {
            return Err(LpError::EmptyInterval(tag.to_string(), lower, upper));
        }
        let id = VarId(self.vars.len());
        if self.var_tags.insert(tag.clone(), id).is_some() {
            return Err(LpError::DuplicateTag(tag.to_string()));
        }
        self.vars.push(Variable { tag, cost, lower, upper });
        Ok(id)
    }

    pub fn add_row(&mut self, tag: Tag, coeffs: Vec<(VarId, f64)>, bounds: RowBounds) -> Result<RowId, LpError> {
        let (lower, upper) = bounds.interval();
        if lower.is_nan() || upper.is_nan() || lower == f64::INFINITY || upper == f64::NEG_INFINITY {
            return Err(LpError::NonFinite(tag.to_string()));
        }
        if lower > upper {
            return Err(LpError::EmptyInterval(tag.to_string(), lower, upper));
        }
        for &(v, a) in &coeffs {
            if v.0 >= self.vars.len() {
                return Err(LpError::UnknownVariable(tag.to_string(), v.0));
            }
            if !a.is_finite() {
                return Err(LpError::NonFinite(tag.to_string()));
            }
        }
        let id = RowId(self.rows.len());
        if self.row_tags.insert(tag.clone(), id).is_some() {
            return Err(LpError::DuplicateTag(tag.to_string()));
        }
        self.rows.push(Row {
            tag,
            coeffs,
            lower,
            upper,
        });
        Ok(id)
    }

    pub fn set_offset(&mut self, offset: f64) {
        self.offset = offset;
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var(&self, tag: &Tag) -> Option<VarId> {
        self.var_tags.get(tag).copied()
    }

    pub fn row(&self, tag: &Tag) -> Option<RowId> {
        self.row_tags.get(tag).copied()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.offset + self.vars.iter().zip(x).map(|(v, xi)| v.cost * xi).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Non-negative multipliers of the lower (`>=`) and upper (`<=`) side of a
/// constraint. At most one is positive at an optimal basic solution.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct DualPair {
    pub lower: f64,
    pub upper: f64,
}

impl DualPair {
    pub fn from_signed(y: f64) -> Self {
        DualPair {
            lower: y.max(0.0),
            upper: (-y).max(0.0),
        }
    }

    /// `lower - upper`.
    pub fn net(&self) -> f64 {
        self.lower - self.upper
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Signed row duals, `lower - upper`.
    pub row_duals: Vec<f64>,
    /// Signed bound multipliers (reduced costs), `lower - upper`.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub(crate) fn non_optimal(status: LpStatus, lp: &LinearProgram, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![0.0; lp.num_vars()],
            objective: match status {
                LpStatus::Infeasible => f64::INFINITY,
                _ => f64::NEG_INFINITY,
            },
            row_duals: vec![0.0; lp.num_rows()],
            reduced_costs: vec![0.0; lp.num_vars()],
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.x[v.0]
    }

    pub fn row_dual(&self, r: RowId) -> DualPair {
        DualPair::from_signed(self.row_duals[r.0])
    }

    /// Signed dual of an equality row.
    pub fn eq_dual(&self, r: RowId) -> f64 {
        self.row_duals[r.0]
    }

    pub fn bound_dual(&self, v: VarId) -> DualPair {
        DualPair::from_signed(self.reduced_costs[v.0])
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

/// Anything that can solve a [`LinearProgram`] and return basic duals.
pub trait LpSolver: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution, SolverError>;
}

/// Solves with the bundled dual simplex and default options.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution, SolverError> {
    DualSimplex::default().solve(lp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_display() {
        assert_eq!(Tag::at("ramp_d", &[1, 4, 7]).to_string(), "ramp_d[1,4,7]");
        assert_eq!(Tag::at("balance", &[3]).to_string(), "balance[3]");
        assert_eq!(Tag::named("obj").to_string(), "obj");
    }

    #[test]
    fn duplicate_tags_rejected() {
        let mut lp = LinearProgram::new();
        lp.add_var(Tag::at("x", &[0]), 1.0, 0.0, 1.0).unwrap();
        let err = lp.add_var(Tag::at("x", &[0]), 1.0, 0.0, 1.0).unwrap_err();
        assert_eq!(err, LpError::DuplicateTag("x[0]".into()));
    }

    #[test]
    fn non_finite_rejected() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(Tag::named("x"), 1.0, 0.0, f64::INFINITY).unwrap();
        assert!(lp.add_var(Tag::named("y"), f64::NAN, 0.0, 1.0).is_err());
        assert!(lp
            .add_row(Tag::named("r"), vec![(x, f64::INFINITY)], RowBounds::Le(1.0))
            .is_err());
        assert!(lp
            .add_row(Tag::named("r2"), vec![(VarId(9), 1.0)], RowBounds::Le(1.0))
            .is_err());
    }
}
