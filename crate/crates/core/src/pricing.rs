//! LMP and TLMP from binding-interval multipliers.

use std::io;

use serde::Serialize;

use crate::dispatch::{BindingRecord, DispatchTrace};

/// Primal slack at or below which a ramp or SOC constraint counts as binding.
pub const BINDING_SLACK: f64 = 1e-6;

pub fn lmp(record: &BindingRecord) -> f64 {
    record.lambda
}

/// Price components of one resource in one interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourcePrice {
    pub tlmp_c: f64,
    pub tlmp_d: f64,
    pub phi: f64,
    pub ramp_c: f64,
    pub ramp_d: f64,
}

/// `(π^C, π^D) = (λ - ξ^C φ - Δ^C, λ - φ/ξ^D + Δ^D)`.
pub fn tlmp(record: &BindingRecord, i: usize) -> ResourcePrice {
    let r = &record.resources[i];
    let (ramp_c, ramp_d) = (r.ramp_price_c(), r.ramp_price_d());
    ResourcePrice {
        tlmp_c: record.lambda - r.eff_c * r.phi - ramp_c,
        tlmp_d: record.lambda - r.phi / r.eff_d + ramp_d,
        phi: r.phi,
        ramp_c,
        ramp_d,
    }
}

/// SOC price rebuilt from SOC-limit multipliers: `Δδ_t + sum Δδ_{t',k}`
/// with `Δδ = δ_ - δ̄`. Equals φ at any optimal window solution.
pub fn soc_price_via_limits(record: &BindingRecord, i: usize) -> f64 {
    let r = &record.resources[i];
    r.delta.net() + r.delta_advisory.iter().map(|d| d.net()).sum::<f64>()
}

/// True if resource `i` has no binding ramp into or out of the binding
/// interval and no binding SOC limit anywhere in the window. Binding means
/// primal slack at most [`BINDING_SLACK`], so degenerate constraints count.
pub fn reduces_to_lmp(record: &BindingRecord, i: usize) -> bool {
    let r = &record.resources[i];
    r.ramp_slack > BINDING_SLACK && r.soc_slack > BINDING_SLACK
}

/// Largest `|TLMP - LMP|` of resource `i` when [`reduces_to_lmp`] holds.
pub fn corollary_gap(record: &BindingRecord, i: usize) -> Option<f64> {
    reduces_to_lmp(record, i).then(|| {
        let p = tlmp(record, i);
        (p.tlmp_c - record.lambda).abs().max((p.tlmp_d - record.lambda).abs())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    pub lmp: Vec<f64>,
    /// `resources[i][t]`.
    pub resources: Vec<Vec<ResourcePrice>>,
}

impl PriceSeries {
    pub fn from_trace(trace: &DispatchTrace) -> Self {
        let n = trace.records.first().map_or(0, |r| r.resources.len());
        PriceSeries {
            lmp: trace.records.iter().map(lmp).collect(),
            resources: (0..n).map(|i| trace.records.iter().map(|r| tlmp(r, i)).collect()).collect(),
        }
    }

    pub fn tlmp_d(&self, i: usize) -> Vec<f64> {
        self.resources[i].iter().map(|p| p.tlmp_d).collect()
    }

    pub fn tlmp_c(&self, i: usize) -> Vec<f64> {
        self.resources[i].iter().map(|p| p.tlmp_c).collect()
    }

    /// Columns `t, resource, lmp, tlmp_c, tlmp_d, phi, delta_c, delta_d`.
    pub fn write_csv(&self, ids: &[String], w: impl io::Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "resource", "lmp", "tlmp_c", "tlmp_d", "phi", "delta_c", "delta_d"])?;
        for (t, &l) in self.lmp.iter().enumerate() {
            for (i, id) in ids.iter().enumerate() {
                let p = &self.resources[i][t];
                out.serialize((t + 1, id, l, p.tlmp_c, p.tlmp_d, p.phi, p.ramp_c, p.ramp_d))?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{roll_horizon, solve_window, Boundary, DispatchMode, WindowProblem};
    use crate::model::{generator_as_esr, EsrSpec, Fleet, Ramps, Resource};
    use crate::scenario::{FixedForecast, PerfectForecast, ScenarioSet};

    fn gen(id: &str, cap: f64, ramp: f64, cost: f64, init: f64) -> Resource {
        let mut s = generator_as_esr(id, cap, ramp, cost).unwrap();
        s.init_d = init;
        Resource::truthful(s)
    }

    fn storage(soc_max: f64) -> Resource {
        Resource::truthful(EsrSpec {
            id: "S".into(),
            cost_d: 5.0,
            cost_c: 1.0,
            cap_d: 10.0,
            cap_c: 10.0,
            ramps: Ramps::UNBOUNDED,
            soc_min: Some(0.0),
            soc_max: Some(soc_max),
            soc_init: 0.0,
            eff_c: 0.9,
            eff_d: 0.9,
            init_d: 0.0,
            init_c: 0.0,
        })
    }

    #[test]
    fn calibrated_prices() {
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
        let p = PriceSeries::from_trace(&tr);
        assert!((p.lmp[0] - 25.0).abs() < 1e-9 && (p.lmp[1] - 30.0).abs() < 1e-9);
        let g3 = p.tlmp_d(2);
        assert!((g3[0] - 28.0).abs() < 1e-9 && (g3[1] - 30.0).abs() < 1e-9, "{g3:?}");
        assert!(!reduces_to_lmp(&tr.records[0], 2));
    }

    #[test]
    fn slack_system_tlmp_equals_lmp() {
        let fleet = Fleet::new(vec![gen("A", 300.0, 100.0, 20.0, 100.0), gen("B", 300.0, 100.0, 35.0, 0.0)], 4, 3);
        let d = [120.0, 130.0, 125.0, 110.0];
        let tr = roll_horizon(&fleet, &d, &PerfectForecast, DispatchMode::Deterministic, &Default::default()).unwrap();
        for rec in &tr.records {
            for i in 0..2 {
                assert!(reduces_to_lmp(rec, i));
                assert!(corollary_gap(rec, i).unwrap() < 1e-9);
                assert_eq!(soc_price_via_limits(rec, i), 0.0);
            }
        }
    }

    #[test]
    fn binding_soc_cap_sets_charge_price() {
        // Cheap then expensive energy: storage fills up to its SOC limit.
        let fleet = Fleet::new(
            vec![
                gen("cheap", 100.0, 100.0, 10.0, 50.0),
                gen("dear", 100.0, 100.0, 40.0, 0.0),
                storage(4.0),
            ],
            3,
            3,
        );
        let d = [50.0, 120.0, 120.0];
        let tr = roll_horizon(&fleet, &d, &PerfectForecast, DispatchMode::Deterministic, &Default::default()).unwrap();
        let rec = &tr.records[0];
        let r = &rec.resources[2];
        assert!(r.g_c > 0.0, "storage should charge: {r:?}");
        let p = tlmp(rec, 2);
        assert!(r.phi.abs() > 1e-6, "{r:?}");
        assert!((p.tlmp_c - (rec.lambda - 0.9 * r.phi)).abs() < 1e-9);
        assert!((soc_price_via_limits(rec, 2) - r.phi).abs() < 1e-6);
    }

    #[test]
    fn lmp_is_demand_sensitivity() {
        let fleet = Fleet::new(vec![gen("A", 300.0, 40.0, 20.0, 100.0), gen("B", 300.0, 100.0, 35.0, 0.0)], 3, 3);
        let views: Vec<_> = fleet.resources.iter().map(|r| r.bid_view()).collect();
        let boundary: Vec<_> = fleet.resources.iter().map(|r| Boundary::initial(&r.truth)).collect();
        let at = |d0: f64| {
            let p = WindowProblem {
                t: 0,
                scenarios: ScenarioSet::single(vec![d0, 170.0, 150.0]),
                boundary: boundary.clone(),
            };
            solve_window(&views, &p, &Default::default()).unwrap()
        };
        let base = at(120.0);
        let h = 1e-4 * 120.0;
        let fd = (at(120.0 + h).objective - base.objective) / h;
        assert!((fd - base.lambda).abs() <= 1e-3 * base.lambda.abs(), "{fd} vs {}", base.lambda);
    }

    #[test]
    fn price_csv_schema() {
        let p = PriceSeries {
            lmp: vec![25.0],
            resources: vec![vec![ResourcePrice {
                tlmp_c: 1.0,
                tlmp_d: 2.0,
                phi: 3.0,
                ramp_c: 4.0,
                ramp_d: 5.0,
            }]],
        };
        let mut buf = Vec::new();
        p.write_csv(&["G1".into()], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,resource,lmp,tlmp_c,tlmp_d,phi,delta_c,delta_d\n1,G1,25.0,1.0,2.0,3.0,4.0,5.0\n"
        );
    }
}
