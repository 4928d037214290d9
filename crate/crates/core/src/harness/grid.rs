use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dispatch::{roll_horizon, DispatchMode, DispatchOptions};
use crate::model::{Fleet, FleetDoc};
use crate::pricing::PriceSeries;
use crate::scenario::{FixedForecast, ForecastProvider, PerfectForecast};
use crate::settlement::{loc, schedule_profit};

/// Axes of the bid manipulation grid for one resource. Prices are held
/// fixed at the given vectors for every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub resource: String,
    pub costs: Vec<f64>,
    pub ramps: Vec<f64>,
    pub price_lmp: Vec<f64>,
    pub price_tlmp_d: Vec<f64>,
    pub price_tlmp_c: Vec<f64>,
}

impl GridSpec {
    /// Inclusive range `a, a + step, ..., b`, rounded to 1e-9 so that
    /// grid values compare equal to their decimal spelling.
    pub fn axis(a: f64, b: f64, step: f64) -> Result<Vec<f64>, HarnessError> {
        if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
            return Err(HarnessError::Config(format!("bad range {a}:{b}:{step}")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|k| ((a + k as f64 * step) * 1e9).round() / 1e9).collect())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let sorted = |v: &[f64]| !v.is_empty() && v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.costs) || !sorted(&self.ramps) {
            return Err(HarnessError::Config("grid axes must be non-empty, finite and increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub cost: f64,
    pub ramp: f64,
    pub feasible: bool,
    pub dispatch: Vec<f64>,
    pub in_market_lmp: f64,
    pub loc_lmp: f64,
    pub profit_lmp: f64,
    pub profit_tlmp: f64,
}

/// Profit surfaces indexed `[cost][ramp]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSurface {
    pub spec: GridSpec,
    pub points: Vec<Vec<GridPoint>>,
}

impl GridSurface {
    pub fn at(&self, cost: f64, ramp: f64) -> Option<&GridPoint> {
        let i = self.spec.costs.iter().position(|&c| (c - cost).abs() < 1e-9)?;
        let j = self.spec.ramps.iter().position(|&r| (r - ramp).abs() < 1e-9)?;
        Some(&self.points[i][j])
    }

    /// Feasible grid points adjacent to `(i, j)` including diagonals.
    pub fn neighbors(&self, i: usize, j: usize) -> Vec<&GridPoint> {
        let mut out = Vec::new();
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a < 0 || b < 0 {
                    continue;
                }
                if let Some(p) = self.points.get(a as usize).and_then(|row| row.get(b as usize)) {
                    if p.feasible {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    pub fn write_csv(&self, w: impl io::Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["resource", "cost", "ramp", "feasible", "in_market_lmp", "loc_lmp", "profit_lmp", "profit_tlmp"])?;
        for p in self.points.iter().flatten() {
            out.write_record([
                self.spec.resource.clone(),
                p.cost.to_string(),
                p.ramp.to_string(),
                p.feasible.to_string(),
                p.in_market_lmp.to_string(),
                p.loc_lmp.to_string(),
                p.profit_lmp.to_string(),
                p.profit_tlmp.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Re-dispatches `fleet` for every (cost, ramp) bid of the target resource
/// and evaluates its profit at the fixed prices. The uplift part of the LMP
/// profit is the LOC measured against the submitted bid; in-market profits
/// use true costs.
pub fn bid_manipulation_grid(
    spec: &GridSpec,
    fleet: &Fleet,
    demand: &[f64],
    forecast: &dyn ForecastProvider,
    mode: DispatchMode,
) -> Result<GridSurface, HarnessError> {
    spec.validate()?;
    let idx = fleet
        .index_of(&spec.resource)
        .ok_or_else(|| HarnessError::Config(format!("no resource `{}`", spec.resource)))?;
    let t = demand.len();
    if [&spec.price_lmp, &spec.price_tlmp_d, &spec.price_tlmp_c].iter().any(|p| p.len() != t) {
        return Err(HarnessError::Config("fixed price vectors must span the horizon".into()));
    }
    let opts = DispatchOptions::default();
    let mut points = Vec::with_capacity(spec.costs.len());
    for &cost in &spec.costs {
        let mut row = Vec::with_capacity(spec.ramps.len());
        for &ramp in &spec.ramps {
            let mut f = fleet.clone();
            let r = &mut f.resources[idx];
            r.bid.cost_d = Some(cost);
            r.bid.ramp_up_d = Some(Some(ramp));
            r.bid.ramp_down_d = Some(Some(ramp));
            let point = match roll_horizon(&f, demand, forecast, mode, &opts) {
                Ok(trace) => {
                    let r = &f.resources[idx];
                    let g_d = trace.dispatch_d(idx);
                    let g_c = trace.dispatch_c(idx);
                    let truth = r.true_view();
                    let in_market = schedule_profit(&spec.price_lmp, &spec.price_lmp, &g_d, &g_c, &truth);
                    let l = loc(&spec.price_lmp, &spec.price_lmp, &g_d, &g_c, &r.bid_view(), &opts.tolerances)?;
                    let profit_tlmp = schedule_profit(&spec.price_tlmp_d, &spec.price_tlmp_c, &g_d, &g_c, &truth);
                    GridPoint {
                        cost,
                        ramp,
                        feasible: true,
                        dispatch: g_d,
                        in_market_lmp: in_market,
                        loc_lmp: l.value,
                        profit_lmp: in_market + l.value,
                        profit_tlmp,
                    }
                }
                Err(e) => {
                    log::warn!("grid point ({cost}, {ramp}): {e}");
                    GridPoint {
                        cost,
                        ramp,
                        feasible: false,
                        dispatch: Vec::new(),
                        in_market_lmp: f64::NAN,
                        loc_lmp: f64::NAN,
                        profit_lmp: f64::NAN,
                        profit_tlmp: f64::NAN,
                    }
                }
            };
            row.push(point);
        }
        points.push(row);
    }
    Ok(GridSurface {
        spec: spec.clone(),
        points,
    })
}

fn default_resource() -> String {
    "G3".into()
}

/// Grid experiment file. `fleet` must carry a demand path. Without
/// `windows` every window sees the realized demand; without fixed prices
/// the truthful dispatch's LMP and the resource's TLMP are used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub fleet: PathBuf,
    #[serde(default = "default_resource")]
    pub resource: String,
    #[serde(default)]
    pub windows: Option<Vec<Vec<f64>>>,
    /// `[start, end, step]`.
    pub cost_range: [f64; 3],
    pub ramp_range: [f64; 3],
    #[serde(default)]
    pub price_lmp: Option<Vec<f64>>,
    #[serde(default)]
    pub price_tlmp_d: Option<Vec<f64>>,
    #[serde(default)]
    pub price_tlmp_c: Option<Vec<f64>>,
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut cfg: GridConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if cfg.fleet.is_relative() {
            cfg.fleet = path.parent().unwrap_or(Path::new(".")).join(&cfg.fleet);
        }
        Ok(cfg)
    }

    pub fn run(&self) -> Result<GridSurface, HarnessError> {
        let doc = FleetDoc::load(&self.fleet)?;
        let fleet = doc.fleet()?;
        let demand = doc
            .demand
            .clone()
            .ok_or_else(|| HarnessError::Config("grid fleet needs a demand path".into()))?;
        let forecast: Box<dyn ForecastProvider> = match &self.windows {
            Some(w) => Box::new(FixedForecast { windows: w.clone() }),
            None => Box::new(PerfectForecast),
        };
        let idx = fleet
            .index_of(&self.resource)
            .ok_or_else(|| HarnessError::Config(format!("no resource `{}`", self.resource)))?;
        let truthful = roll_horizon(&fleet, &demand, forecast.as_ref(), DispatchMode::Deterministic, &DispatchOptions::default())?;
        let prices = PriceSeries::from_trace(&truthful);
        let spec = GridSpec {
            resource: self.resource.clone(),
            costs: GridSpec::axis(self.cost_range[0], self.cost_range[1], self.cost_range[2])?,
            ramps: GridSpec::axis(self.ramp_range[0], self.ramp_range[1], self.ramp_range[2])?,
            price_lmp: self.price_lmp.clone().unwrap_or_else(|| prices.lmp.clone()),
            price_tlmp_d: self.price_tlmp_d.clone().unwrap_or_else(|| prices.tlmp_d(idx)),
            price_tlmp_c: self.price_tlmp_c.clone().unwrap_or_else(|| prices.tlmp_c(idx)),
        };
        bid_manipulation_grid(&spec, &fleet, &demand, forecast.as_ref(), DispatchMode::Deterministic)
    }
}
