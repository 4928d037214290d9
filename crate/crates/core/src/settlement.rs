//! Ex-post settlement: the self-scheduling profit oracle, lost opportunity
//! cost, per-resource profits and the ISO merchandising surplus.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{ramp_bounds, DispatchTrace};
use crate::model::{Fleet, ResourceView};
use crate::pricing::PriceSeries;
use crate::solver::{DualSimplex, LinearProgram, LpError, LpSolver, LpStatus, RowBounds, SolverError, Tag, Tolerances, VarId};

#[derive(Debug, Error)]
pub enum SettlementError {
    #[error("resource `{0}`: self-scheduling problem is infeasible")]
    Infeasible(String),
    #[error("resource `{0}`: self-scheduling problem is unbounded")]
    Unbounded(String),
    #[error("price vectors have length {prices}, expected {horizon}")]
    Length { prices: usize, horizon: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Optimal self-schedule at given prices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfSchedule {
    pub q: f64,
    pub p_d: Vec<f64>,
    pub p_c: Vec<f64>,
    pub soc: Vec<f64>,
}

/// Maximizes `sum_t πD_t pD_t - πC_t pC_t - f^D_t(pD_t) + f^C_t(pC_t)`
/// over the horizon subject to the resource's capacity, ramp and SOC
/// limits, starting from its own initial dispatch and SOC.
pub fn individual_profit_max(
    price_d: &[f64],
    price_c: &[f64],
    view: &ResourceView,
    tol: &Tolerances,
) -> Result<SelfSchedule, SettlementError> {
    let horizon = price_d.len();
    if price_c.len() != horizon {
        return Err(SettlementError::Length {
            prices: price_c.len(),
            horizon,
        });
    }
    let s = &view.spec;
    let mut lp = LinearProgram::new();
    let mut pd: Vec<VarId> = Vec::with_capacity(horizon);
    let mut pc: Vec<VarId> = Vec::with_capacity(horizon);
    let mut e: Vec<VarId> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        pd.push(lp.add_var(Tag::at("pd", &[t]), view.curve_d.at(t) - price_d[t], 0.0, s.cap_d)?);
        pc.push(lp.add_var(Tag::at("pc", &[t]), price_c[t] - view.curve_c.at(t), 0.0, s.cap_c)?);
        if s.has_soc_limits() {
            e.push(lp.add_var(
                Tag::at("e", &[t]),
                0.0,
                s.soc_min.unwrap_or(f64::NEG_INFINITY),
                s.soc_max.unwrap_or(f64::INFINITY),
            )?);
        }
    }
    let rd = ramp_bounds(s.ramps.down_d, s.ramps.up_d, s.cap_d);
    let rc = ramp_bounds(s.ramps.down_c, s.ramps.up_c, s.cap_c);
    for t in 0..horizon {
        if s.has_soc_limits() {
            let mut coeffs = vec![(e[t], -1.0), (pc[t], s.eff_c), (pd[t], -1.0 / s.eff_d)];
            let rhs = if t == 0 {
                -s.soc_init
            } else {
                coeffs.push((e[t - 1], 1.0));
                0.0
            };
            lp.add_row(Tag::at("soc", &[t]), coeffs, RowBounds::Eq(rhs))?;
        }
        for (group, lim, v, init) in [("ramp_d", rd, &pd, s.init_d), ("ramp_c", rc, &pc, s.init_c)] {
            if let Some((lo, hi)) = lim {
                let (coeffs, off) = if t == 0 {
                    (vec![(v[0], 1.0)], init)
                } else {
                    (vec![(v[t], 1.0), (v[t - 1], -1.0)], 0.0)
                };
                lp.add_row(Tag::at(group, &[t]), coeffs, RowBounds::Range(lo + off, hi + off))?;
            }
        }
    }
    let sol = DualSimplex::with_tolerances(*tol).solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(SettlementError::Infeasible(s.id.clone())),
        LpStatus::Unbounded => return Err(SettlementError::Unbounded(s.id.clone())),
    }
    let soc = if s.has_soc_limits() {
        e.iter().map(|&v| sol.value(v)).collect()
    } else {
        let mut soc = s.soc_init;
        pd.iter()
            .zip(&pc)
            .map(|(&d, &c)| {
                soc = s.soc_after(soc, sol.value(d), sol.value(c));
                soc
            })
            .collect()
    };
    Ok(SelfSchedule {
        q: -sol.objective,
        p_d: pd.iter().map(|&v| sol.value(v)).collect(),
        p_c: pc.iter().map(|&v| sol.value(v)).collect(),
        soc,
    })
}

/// Profit of a schedule at the given prices, net of the view's cost curves.
pub fn schedule_profit(price_d: &[f64], price_c: &[f64], g_d: &[f64], g_c: &[f64], view: &ResourceView) -> f64 {
    (0..g_d.len())
        .map(|t| {
            price_d[t] * g_d[t] - price_c[t] * g_c[t] - view.curve_d.cost(t, g_d[t]) + view.curve_c.cost(t, g_c[t])
        })
        .sum()
}

/// Violations of the view's limits by a dispatch schedule.
pub fn schedule_diagnostics(g_d: &[f64], g_c: &[f64], view: &ResourceView, tol: f64) -> Vec<String> {
    let s = &view.spec;
    let mut out = Vec::new();
    let (mut soc, mut prev_d, mut prev_c) = (s.soc_init, s.init_d, s.init_c);
    for t in 0..g_d.len() {
        let (d, c) = (g_d[t], g_c[t]);
        if d < -tol || d > s.cap_d + tol || c < -tol || c > s.cap_c + tol {
            out.push(format!("interval {}: dispatch outside capacity", t + 1));
        }
        let ramp_ok = |g: f64, prev: f64, up: Option<f64>, down: Option<f64>| {
            up.map_or(true, |r| g - prev <= r + tol) && down.map_or(true, |r| prev - g <= r + tol)
        };
        if !ramp_ok(d, prev_d, s.ramps.up_d, s.ramps.down_d) || !ramp_ok(c, prev_c, s.ramps.up_c, s.ramps.down_c) {
            out.push(format!("interval {}: ramp limit exceeded", t + 1));
        }
        soc = s.soc_after(soc, d, c);
        if s.soc_min.is_some_and(|m| soc < m - tol) || s.soc_max.is_some_and(|m| soc > m + tol) {
            out.push(format!("interval {}: SOC {soc} outside limits", t + 1));
        }
        (prev_d, prev_c) = (d, c);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Loc {
    /// `max(raw, 0)`.
    pub value: f64,
    pub raw: f64,
    pub q: f64,
    pub dispatch_profit: f64,
    pub diagnostics: Vec<String>,
}

/// `Q(π) - profit(dispatch)` for one resource, both evaluated with `view`.
pub fn loc(
    price_d: &[f64],
    price_c: &[f64],
    g_d: &[f64],
    g_c: &[f64],
    view: &ResourceView,
    tol: &Tolerances,
) -> Result<Loc, SettlementError> {
    let diagnostics = schedule_diagnostics(g_d, g_c, view, 1e-6);
    for d in &diagnostics {
        log::warn!("`{}`: {d}", view.spec.id);
    }
    let q = individual_profit_max(price_d, price_c, view, tol)?.q;
    let dispatch_profit = schedule_profit(price_d, price_c, g_d, g_c, view);
    let raw = q - dispatch_profit;
    if raw < 0.0 {
        log::debug!("`{}`: raw LOC {raw:e} floored at zero", view.spec.id);
    }
    Ok(Loc {
        value: raw.max(0.0),
        raw,
        q,
        dispatch_profit,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Lmp,
    Tlmp,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Lmp => "lmp",
            Scheme::Tlmp => "tlmp",
        }
    }
}

/// Which parameters the opportunity-cost oracle uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LocBasis {
    /// The reported bid, as known to the operator.
    #[default]
    Bid,
    /// The resource's true parameters.
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceSettlement {
    pub id: String,
    /// Energy payment received, `sum πD gD - πC gC`.
    pub payment: f64,
    /// Payment minus true cost.
    pub in_market: f64,
    pub loc: f64,
    pub loc_raw: f64,
    /// Optimal self-scheduling profit behind the LOC.
    pub q: f64,
    /// Uplift actually paid (the LOC under LMP, zero under TLMP).
    pub uplift: f64,
    pub total_profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlementReport {
    pub scheme: Scheme,
    pub resources: Vec<ResourceSettlement>,
    /// `sum_t λ_t d_t`.
    pub demand_charge: f64,
    /// Demand charge minus energy payments.
    pub surplus_before_uplift: f64,
    /// Demand charge minus energy payments and uplifts.
    pub merchandising_surplus: f64,
}

impl SettlementReport {
    pub fn total_loc(&self) -> f64 {
        self.resources.iter().map(|r| r.loc).sum()
    }

    /// Columns `resource, scheme, in_market, loc, total`, then an `ISO` row
    /// carrying the merchandising surplus in `total`.
    pub fn write_csv(&self, w: impl io::Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["resource", "scheme", "in_market", "loc", "total"])?;
        for r in &self.resources {
            out.serialize((&r.id, self.scheme.label(), r.in_market, r.loc, r.total_profit))?;
        }
        out.serialize(("ISO", self.scheme.label(), self.surplus_before_uplift, 0.0, self.merchandising_surplus))?;
        out.flush()?;
        Ok(())
    }
}

/// Settles a dispatch trace under one pricing scheme. Demand always pays
/// the LMP; LOC uplift is paid only under [`Scheme::Lmp`].
pub fn profit_with_scheme(
    scheme: Scheme,
    trace: &DispatchTrace,
    prices: &PriceSeries,
    fleet: &Fleet,
    basis: LocBasis,
    tol: &Tolerances,
) -> Result<SettlementReport, SettlementError> {
    let demand_charge: f64 = prices.lmp.iter().zip(&trace.demand).map(|(l, d)| l * d).sum();
    let mut resources = Vec::with_capacity(fleet.len());
    for (i, res) in fleet.resources.iter().enumerate() {
        let (pd, pc) = match scheme {
            Scheme::Lmp => (prices.lmp.clone(), prices.lmp.clone()),
            Scheme::Tlmp => (prices.tlmp_d(i), prices.tlmp_c(i)),
        };
        let g_d = trace.dispatch_d(i);
        let g_c = trace.dispatch_c(i);
        let truth = res.true_view();
        let payment: f64 = (0..g_d.len()).map(|t| pd[t] * g_d[t] - pc[t] * g_c[t]).sum();
        let in_market = schedule_profit(&pd, &pc, &g_d, &g_c, &truth);
        let oracle_view = match basis {
            LocBasis::Bid => res.bid_view(),
            LocBasis::True => truth,
        };
        let l = loc(&pd, &pc, &g_d, &g_c, &oracle_view, tol)?;
        let uplift = if scheme == Scheme::Lmp { l.value } else { 0.0 };
        resources.push(ResourceSettlement {
            id: res.id().to_string(),
            payment,
            in_market,
            loc: l.value,
            loc_raw: l.raw,
            q: l.q,
            uplift,
            total_profit: in_market + uplift,
        });
    }
    let payments: f64 = resources.iter().map(|r| r.payment).sum();
    let uplifts: f64 = resources.iter().map(|r| r.uplift).sum();
    Ok(SettlementReport {
        scheme,
        resources,
        demand_charge,
        surplus_before_uplift: demand_charge - payments,
        merchandising_surplus: demand_charge - payments - uplifts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{roll_horizon, DispatchMode};
    use crate::model::{generator_as_esr, EsrSpec, Ramps, Resource};
    use crate::scenario::{FixedForecast, PerfectForecast};

    fn gen(id: &str, cap: f64, ramp: f64, cost: f64, init: f64) -> Resource {
        let mut s = generator_as_esr(id, cap, ramp, cost).unwrap();
        s.init_d = init;
        Resource::truthful(s)
    }

    fn calibrated() -> (Fleet, DispatchTrace) {
        let fleet = Fleet::new(
            vec![
                gen("G1", 500.0, 500.0, 25.0, 400.0),
                gen("G2", 100.0, 50.0, 30.0, 0.0),
                gen("G3", 1.0, 0.8, 28.0, 0.2),
            ],
            2,
            2,
        );
        let fc = FixedForecast {
            windows: vec![vec![420.0, 600.0], vec![600.0, 600.0]],
        };
        let tr = roll_horizon(&fleet, &[420.0, 600.0], &fc, DispatchMode::Deterministic, &Default::default()).unwrap();
        (fleet, tr)
    }

    #[test]
    fn generator_above_price_stays_off() {
        let v = gen("G", 10.0, 10.0, 50.0, 0.0).true_view();
        let s = individual_profit_max(&[30.0; 4], &[30.0; 4], &v, &Tolerances::default()).unwrap();
        assert!(s.q.abs() < 1e-12);
        assert!(s.p_d.iter().all(|&p| p.abs() < 1e-12));
    }

    #[test]
    fn storage_arbitrage() {
        let v = Resource::truthful(EsrSpec {
            id: "S".into(),
            cost_d: 0.0,
            cost_c: 0.0,
            cap_d: 1.0,
            cap_c: 1.0,
            ramps: Ramps::UNBOUNDED,
            soc_min: Some(0.0),
            soc_max: Some(1.0),
            soc_init: 0.0,
            eff_c: 1.0,
            eff_d: 1.0,
            init_d: 0.0,
            init_c: 0.0,
        })
        .true_view();
        let s = individual_profit_max(&[10.0, 50.0], &[10.0, 50.0], &v, &Tolerances::default()).unwrap();
        assert!((s.q - 40.0).abs() < 1e-9);
        assert!((s.p_c[0] - 1.0).abs() < 1e-9 && (s.p_d[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn calibrated_g3_self_schedule() {
        let (fleet, _) = calibrated();
        let v = fleet.resources[2].true_view();
        let s = individual_profit_max(&[25.0, 30.0], &[25.0, 30.0], &v, &Tolerances::default()).unwrap();
        assert!((s.q - 1.6).abs() < 1e-9);
        assert!(s.p_d[0].abs() < 1e-9 && (s.p_d[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn calibrated_settlement() {
        let (fleet, tr) = calibrated();
        let p = PriceSeries::from_trace(&tr);
        let tol = Tolerances::default();
        let lmp = profit_with_scheme(Scheme::Lmp, &tr, &p, &fleet, LocBasis::Bid, &tol).unwrap();
        let g3 = &lmp.resources[2];
        assert!((g3.in_market - 1.4).abs() < 1e-9, "{g3:?}");
        assert!((g3.loc - 0.2).abs() < 1e-9);
        assert!((g3.total_profit - 1.6).abs() < 1e-9);
        assert!(lmp.surplus_before_uplift.abs() < 1e-9);
        assert!((lmp.merchandising_surplus + lmp.total_loc()).abs() < 1e-9);

        let tlmp = profit_with_scheme(Scheme::Tlmp, &tr, &p, &fleet, LocBasis::Bid, &tol).unwrap();
        assert!(tlmp.total_loc() < 1e-9);
        let direct: f64 = (0..fleet.len())
            .map(|i| {
                (0..2)
                    .map(|t| {
                        let r = &tr.records[t].resources[i];
                        let pr = p.resources[i][t];
                        (p.lmp[t] - pr.tlmp_d) * r.g_d + (pr.tlmp_c - p.lmp[t]) * r.g_c
                    })
                    .sum::<f64>()
            })
            .sum();
        assert!((tlmp.merchandising_surplus - direct).abs() < 1e-9);
    }

    #[test]
    fn single_generator_at_cost_breaks_even() {
        let fleet = Fleet::new(vec![gen("A", 300.0, 300.0, 20.0, 0.0)], 3, 2);
        let tr = roll_horizon(&fleet, &[100.0, 150.0, 120.0], &PerfectForecast, DispatchMode::Deterministic, &Default::default())
            .unwrap();
        let p = PriceSeries::from_trace(&tr);
        let r = profit_with_scheme(Scheme::Lmp, &tr, &p, &fleet, LocBasis::Bid, &Tolerances::default()).unwrap();
        assert!(r.resources[0].total_profit.abs() < 1e-9);
        assert!(r.merchandising_surplus.abs() < 1e-9);
    }

    #[test]
    fn diagnostics_flag_infeasible_dispatch() {
        let v = gen("G", 10.0, 2.0, 5.0, 0.0).true_view();
        assert!(schedule_diagnostics(&[1.0, 3.0], &[0.0, 0.0], &v, 1e-9).is_empty());
        assert_eq!(schedule_diagnostics(&[1.0, 4.0], &[0.0, 0.0], &v, 1e-9).len(), 1);
        assert_eq!(schedule_diagnostics(&[11.0, 11.0], &[0.0, 0.0], &v, 1e-9).len(), 3);
    }

    #[test]
    fn settlement_csv_has_iso_row() {
        let (fleet, tr) = calibrated();
        let p = PriceSeries::from_trace(&tr);
        let r = profit_with_scheme(Scheme::Lmp, &tr, &p, &fleet, LocBasis::Bid, &Tolerances::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("resource,scheme,in_market,loc,total\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().last().unwrap().starts_with("ISO,lmp,"));
    }
}
