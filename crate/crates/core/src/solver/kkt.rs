use super::{LinearProgram, LpSolution, Tolerances};

/// Maximum KKT residuals of a primal/dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct KktReport {
    /// `max_j |c_j - sum_i a_ij y_i - z_j|`.
    pub stationarity: f64,
    /// Largest multiplier times slack over rows and bounds.
    pub complementarity: f64,
    /// Largest bound or row violation.
    pub primal_infeasibility: f64,
    /// Largest multiplier sitting on an infinite side.
    pub dual_infeasibility: f64,
    /// `|primal - dual| / (1 + |primal|)`.
    pub relative_gap: f64,
    /// Variable with the largest stationarity residual.
    pub worst_variable: Option<usize>,
}

impl KktReport {
    pub fn within(&self, tol: &Tolerances) -> bool {
        self.stationarity <= tol.kkt
            && self.complementarity <= tol.kkt
            && self.primal_infeasibility <= tol.feas
            && self.dual_infeasibility <= tol.dual
            && self.relative_gap <= tol.kkt
    }
}

fn side_product(mult: f64, slack: f64) -> (f64, f64) {
    // (complementarity, dual infeasibility)
    if mult <= 0.0 {
        (0.0, 0.0)
    } else if slack.is_infinite() {
        (0.0, mult)
    } else {
        ((mult * slack).abs(), 0.0)
    }
}

/// Evaluates the KKT conditions of `lp` at `sol` using the signed duals.
pub fn kkt_residuals(lp: &LinearProgram, sol: &LpSolution) -> KktReport {
    let mut rep = KktReport::default();
    let mut grad: Vec<f64> = lp.vars().iter().map(|v| v.cost).collect();
    let mut dual_obj = lp.offset();

    for (r, row) in lp.rows().iter().enumerate() {
        let y = sol.row_duals[r];
        let act = row.activity(&sol.x);
        for &(v, a) in &row.coeffs {
            grad[v.0] -= a * y;
        }
        let viol = (row.lower - act).max(act - row.upper).max(0.0);
        rep.primal_infeasibility = rep.primal_infeasibility.max(viol);
        let (c1, d1) = side_product(y, act - row.lower);
        let (c2, d2) = side_product(-y, row.upper - act);
        rep.complementarity = rep.complementarity.max(c1).max(c2);
        rep.dual_infeasibility = rep.dual_infeasibility.max(d1).max(d2);
        if y > 0.0 && row.lower.is_finite() {
            dual_obj += y * row.lower;
        } else if y < 0.0 && row.upper.is_finite() {
            dual_obj += y * row.upper;
        }
    }
    for (j, var) in lp.vars().iter().enumerate() {
        let z = sol.reduced_costs[j];
        let x = sol.x[j];
        let res = (grad[j] - z).abs();
        if res > rep.stationarity {
            rep.stationarity = res;
            rep.worst_variable = Some(j);
        }
        let viol = (var.lower - x).max(x - var.upper).max(0.0);
        rep.primal_infeasibility = rep.primal_infeasibility.max(viol);
        let (c1, d1) = side_product(z, x - var.lower);
        let (c2, d2) = side_product(-z, var.upper - x);
        rep.complementarity = rep.complementarity.max(c1).max(c2);
        rep.dual_infeasibility = rep.dual_infeasibility.max(d1).max(d2);
        if z > 0.0 && var.lower.is_finite() {
            dual_obj += z * var.lower;
        } else if z < 0.0 && var.upper.is_finite() {
            dual_obj += z * var.upper;
        }
    }
    let primal_obj = lp.objective_value(&sol.x);
    rep.relative_gap = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
    rep
}
