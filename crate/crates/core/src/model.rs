//! Resources, bids and fleets.
//!
//! Every participant is an [`EsrSpec`]: a storage resource with separate
//! charge and discharge limits and a state of charge. Generators and demand
//! aggregators are the parameter corners built by [`generator_as_esr`] and
//! [`dera_as_esr`]. Limits that do not exist are `None`, never a large
//! number, so the LP builder can leave the corresponding rows out.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0} must be non-negative, got {1}")]
    Negative(&'static str, f64),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("invalid fleet document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("cannot read fleet file: {0}")]
    Io(#[from] std::io::Error),
    #[error("resource `{id}`: {msg}")]
    Resource { id: String, msg: String },
}

/// Ramp limits in MW per interval; `None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ramps {
    pub up_d: Option<f64>,
    pub down_d: Option<f64>,
    pub up_c: Option<f64>,
    pub down_c: Option<f64>,
}

impl Ramps {
    pub fn symmetric(d: Option<f64>, c: Option<f64>) -> Self {
        Ramps {
            up_d: d,
            down_d: d,
            up_c: c,
            down_c: c,
        }
    }

    pub const UNBOUNDED: Ramps = Ramps {
        up_d: None,
        down_d: None,
        up_c: None,
        down_c: None,
    };
}

/// True or bid-in parameters of one resource. Intervals are one hour, so MW
/// and MWh are interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsrSpec {
    pub id: String,
    /// Discharge cost c^D, money/MWh.
    pub cost_d: f64,
    /// Marginal benefit of charging c^C, money/MWh.
    pub cost_c: f64,
    pub cap_d: f64,
    pub cap_c: f64,
    pub ramps: Ramps,
    /// `None` is minus infinity.
    pub soc_min: Option<f64>,
    /// `None` is plus infinity.
    pub soc_max: Option<f64>,
    pub soc_init: f64,
    pub eff_c: f64,
    pub eff_d: f64,
    /// Dispatch in the interval before the horizon.
    pub init_d: f64,
    pub init_c: f64,
}

impl EsrSpec {
    /// True if some SOC limit is finite, so SOC must be tracked in the LP.
    pub fn has_soc_limits(&self) -> bool {
        self.soc_min.is_some() || self.soc_max.is_some()
    }

    /// Anything that can charge or has SOC limits; generators cannot.
    pub fn is_storage(&self) -> bool {
        self.cap_c > 0.0 || self.has_soc_limits()
    }

    pub fn soc_after(&self, soc: f64, g_d: f64, g_c: f64) -> f64 {
        soc + self.eff_c * g_c - g_d / self.eff_d
    }

    /// c^D > c^C / (ξ^C ξ^D); only meaningful if the resource can both
    /// charge and discharge.
    pub fn satisfies_cost_order(&self) -> bool {
        self.cap_c <= 0.0 || self.cap_d <= 0.0 || self.cost_d > self.cost_c / (self.eff_c * self.eff_d)
    }
}

fn check_non_negative(name: &'static str, v: f64) -> Result<(), ModelError> {
    if !v.is_finite() {
        return Err(ModelError::NonFinite(name));
    }
    if v < 0.0 {
        return Err(ModelError::Negative(name, v));
    }
    Ok(())
}

/// A generator: discharge only, no state-of-charge limits, unit
/// efficiencies. The charging side has zero capacity.
pub fn generator_as_esr(id: &str, cap: f64, ramp: f64, cost: f64) -> Result<EsrSpec, ModelError> {
    check_non_negative("cap", cap)?;
    check_non_negative("ramp", ramp)?;
    if !cost.is_finite() {
        return Err(ModelError::NonFinite("cost"));
    }
    Ok(EsrSpec {
        id: id.to_string(),
        cost_d: cost,
        cost_c: 0.0,
        cap_d: cap,
        cap_c: 0.0,
        ramps: Ramps::symmetric(Some(ramp), Some(0.0)),
        soc_min: None,
        soc_max: None,
        soc_init: 0.0,
        eff_c: 1.0,
        eff_d: 1.0,
        init_d: 0.0,
        init_c: 0.0,
    })
}

/// A distributed-resource aggregator: virtual storage whose state of charge
/// is tracked but never limited.
pub fn dera_as_esr(
    id: &str,
    cap_c: f64,
    cap_d: f64,
    ramps: Ramps,
    cost_c: f64,
    cost_d: f64,
) -> Result<EsrSpec, ModelError> {
    check_non_negative("cap_c", cap_c)?;
    check_non_negative("cap_d", cap_d)?;
    for (name, r) in [
        ("ramp_up_d", ramps.up_d),
        ("ramp_down_d", ramps.down_d),
        ("ramp_up_c", ramps.up_c),
        ("ramp_down_c", ramps.down_c),
    ] {
        if let Some(r) = r {
            check_non_negative(name, r)?;
        }
    }
    if !cost_c.is_finite() {
        return Err(ModelError::NonFinite("cost_c"));
    }
    if !cost_d.is_finite() {
        return Err(ModelError::NonFinite("cost_d"));
    }
    Ok(EsrSpec {
        id: id.to_string(),
        cost_d,
        cost_c,
        cap_d,
        cap_c,
        ramps,
        soc_min: None,
        soc_max: None,
        soc_init: 0.0,
        eff_c: 1.0,
        eff_d: 1.0,
        init_d: 0.0,
        init_c: 0.0,
    })
}

/// Linear bid or cost curve `f_t(g) = c_t g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidCurve {
    pub coefficient: f64,
    /// Per-interval coefficients replacing `coefficient` where present.
    #[serde(default)]
    pub overrides: Vec<Option<f64>>,
}

impl BidCurve {
    pub fn linear(coefficient: f64) -> Self {
        BidCurve {
            coefficient,
            overrides: Vec::new(),
        }
    }

    /// Marginal cost in interval `t` (0-based).
    pub fn at(&self, t: usize) -> f64 {
        self.overrides.get(t).copied().flatten().unwrap_or(self.coefficient)
    }

    pub fn cost(&self, t: usize, g: f64) -> f64 {
        self.at(t) * g
    }
}

/// Deserializes `absent -> None`, `null -> Some(None)`, `x -> Some(Some(x))`.
fn double_option<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

/// Reported parameters θ. Absent fields are reported truthfully.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BidParameters {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_d_by_interval: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_c_by_interval: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_c: Option<f64>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub ramp_up_d: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub ramp_down_d: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub ramp_up_c: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub ramp_down_c: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub soc_min: Option<Option<f64>>,
    #[serde(default, deserialize_with = "double_option", skip_serializing_if = "Option::is_none")]
    pub soc_max: Option<Option<f64>>,
}

impl BidParameters {
    pub fn truthful() -> Self {
        Self::default()
    }

    /// The parameters a market operator sees when `truth` bids `self`.
    pub fn apply(&self, truth: &EsrSpec) -> EsrSpec {
        let mut s = truth.clone();
        s.cost_d = self.cost_d.unwrap_or(s.cost_d);
        s.cost_c = self.cost_c.unwrap_or(s.cost_c);
        s.cap_d = self.cap_d.unwrap_or(s.cap_d);
        s.cap_c = self.cap_c.unwrap_or(s.cap_c);
        s.ramps.up_d = self.ramp_up_d.unwrap_or(s.ramps.up_d);
        s.ramps.down_d = self.ramp_down_d.unwrap_or(s.ramps.down_d);
        s.ramps.up_c = self.ramp_up_c.unwrap_or(s.ramps.up_c);
        s.ramps.down_c = self.ramp_down_c.unwrap_or(s.ramps.down_c);
        s.soc_min = self.soc_min.unwrap_or(s.soc_min);
        s.soc_max = self.soc_max.unwrap_or(s.soc_max);
        s
    }
}

/// A participant: its true parameters and what it reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub truth: EsrSpec,
    pub bid: BidParameters,
}

impl Resource {
    pub fn truthful(truth: EsrSpec) -> Self {
        Resource {
            truth,
            bid: BidParameters::truthful(),
        }
    }

    pub fn id(&self) -> &str {
        &self.truth.id
    }

    pub fn bid_spec(&self) -> EsrSpec {
        self.bid.apply(&self.truth)
    }

    pub fn bid_curve_d(&self) -> BidCurve {
        BidCurve {
            coefficient: self.bid.cost_d.unwrap_or(self.truth.cost_d),
            overrides: self.bid.cost_d_by_interval.clone().unwrap_or_default(),
        }
    }

    pub fn bid_curve_c(&self) -> BidCurve {
        BidCurve {
            coefficient: self.bid.cost_c.unwrap_or(self.truth.cost_c),
            overrides: self.bid.cost_c_by_interval.clone().unwrap_or_default(),
        }
    }

    pub fn true_curve_d(&self) -> BidCurve {
        BidCurve::linear(self.truth.cost_d)
    }

    pub fn true_curve_c(&self) -> BidCurve {
        BidCurve::linear(self.truth.cost_c)
    }

    /// Bid parameters with per-interval cost curves resolved.
    pub fn bid_view(&self) -> ResourceView {
        ResourceView {
            spec: self.bid_spec(),
            curve_d: self.bid_curve_d(),
            curve_c: self.bid_curve_c(),
        }
    }

    pub fn true_view(&self) -> ResourceView {
        ResourceView {
            spec: self.truth.clone(),
            curve_d: self.true_curve_d(),
            curve_c: self.true_curve_c(),
        }
    }
}

/// Physical limits together with the cost curves to use with them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceView {
    pub spec: EsrSpec,
    pub curve_d: BidCurve,
    pub curve_c: BidCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub resources: Vec<Resource>,
    pub horizon: usize,
    pub window: usize,
}

impl Fleet {
    pub fn new(resources: Vec<Resource>, horizon: usize, window: usize) -> Self {
        Fleet {
            resources,
            horizon,
            window,
        }
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.id() == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.resources.iter().map(|r| r.id().to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub resource: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        match &self.resource {
            Some(id) => write!(f, "{sev}: {id}: {}", self.message),
            None => write!(f, "{sev}: {}", self.message),
        }
    }
}

fn spec_diagnostics(s: &EsrSpec, label: &str, out: &mut Vec<Diagnostic>) {
    let mut push = |severity, message: String| {
        out.push(Diagnostic {
            severity,
            resource: Some(s.id.clone()),
            message: if label.is_empty() { message } else { format!("{label} {message}") },
        })
    };
    let finite = [
        ("cost_d", s.cost_d),
        ("cost_c", s.cost_c),
        ("cap_d", s.cap_d),
        ("cap_c", s.cap_c),
        ("soc_init", s.soc_init),
        ("eff_c", s.eff_c),
        ("eff_d", s.eff_d),
        ("init_d", s.init_d),
        ("init_c", s.init_c),
    ];
    for (name, v) in finite {
        if !v.is_finite() {
            push(Severity::Error, format!("{name} is not finite"));
        }
    }
    if s.cap_d < 0.0 {
        push(Severity::Error, "cap_d is negative".into());
    }
    if s.cap_c < 0.0 {
        push(Severity::Error, "cap_c is negative".into());
    }
    for (name, r) in [
        ("ramp_up_d", s.ramps.up_d),
        ("ramp_down_d", s.ramps.down_d),
        ("ramp_up_c", s.ramps.up_c),
        ("ramp_down_c", s.ramps.down_c),
    ] {
        match r {
            Some(r) if !r.is_finite() => push(Severity::Error, format!("{name} is not finite")),
            Some(r) if r < 0.0 => push(Severity::Error, format!("{name} is negative")),
            _ => {}
        }
    }
    for (name, e) in [("eff_c", s.eff_c), ("eff_d", s.eff_d)] {
        if !(e > 0.0 && e <= 1.0) {
            push(Severity::Error, format!("{name} outside (0, 1]"));
        }
    }
    if let (Some(lo), Some(hi)) = (s.soc_min, s.soc_max) {
        if lo > hi {
            push(Severity::Error, "soc_min above soc_max".into());
        }
    }
    if let Some(lo) = s.soc_min {
        if s.soc_init < lo {
            push(Severity::Error, "soc_init below soc_min".into());
        }
    }
    if let Some(hi) = s.soc_max {
        if s.soc_init > hi {
            push(Severity::Error, "soc_init above soc_max".into());
        }
    }
    if s.init_d < 0.0 || s.init_d > s.cap_d {
        push(Severity::Error, "init_d outside [0, cap_d]".into());
    }
    if s.init_c < 0.0 || s.init_c > s.cap_c {
        push(Severity::Error, "init_c outside [0, cap_c]".into());
    }
    if !s.satisfies_cost_order() {
        push(
            Severity::Warning,
            "cost_d <= cost_c / (eff_c * eff_d): complementarity relaxation may fail".into(),
        );
    }
}

/// Invariant violations and cost-order warnings; empty means valid.
pub fn validate_fleet(fleet: &Fleet) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if fleet.horizon == 0 {
        out.push(Diagnostic {
            severity: Severity::Error,
            resource: None,
            message: "horizon must be at least 1".into(),
        });
    }
    if fleet.window == 0 || fleet.window > fleet.horizon {
        out.push(Diagnostic {
            severity: Severity::Error,
            resource: None,
            message: format!("window {} outside [1, horizon {}]", fleet.window, fleet.horizon),
        });
    }
    let mut seen = HashSet::new();
    for r in &fleet.resources {
        if !seen.insert(r.id()) {
            out.push(Diagnostic {
                severity: Severity::Error,
                resource: Some(r.id().to_string()),
                message: "duplicate id".into(),
            });
        }
        spec_diagnostics(&r.truth, "", &mut out);
        if r.bid != BidParameters::default() {
            let bid = r.bid_spec();
            let mut bid_diags = Vec::new();
            spec_diagnostics(&bid, "bid", &mut bid_diags);
            out.extend(bid_diags.into_iter().filter(|d| d.severity == Severity::Error));
        }
    }
    out
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceKind {
    Generator,
    Dera,
    Esr,
}

/// One entry of the `resources` array of a fleet document. Limits given as
/// `null` or omitted are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDoc {
    pub id: String,
    pub kind: ResourceKind,
    #[serde(default)]
    pub cost_d: f64,
    #[serde(default)]
    pub cost_c: f64,
    #[serde(default)]
    pub cap_d: f64,
    #[serde(default)]
    pub cap_c: f64,
    #[serde(default)]
    pub ramp_up_d: Option<f64>,
    #[serde(default)]
    pub ramp_down_d: Option<f64>,
    #[serde(default)]
    pub ramp_up_c: Option<f64>,
    #[serde(default)]
    pub ramp_down_c: Option<f64>,
    #[serde(default)]
    pub soc_min: Option<f64>,
    #[serde(default)]
    pub soc_max: Option<f64>,
    #[serde(default)]
    pub soc_init: f64,
    #[serde(default = "one")]
    pub eff_c: f64,
    #[serde(default = "one")]
    pub eff_d: f64,
    #[serde(default)]
    pub init_d: f64,
    #[serde(default)]
    pub init_c: f64,
    #[serde(default)]
    pub bid: BidParameters,
}

fn one() -> f64 {
    1.0
}

impl ResourceDoc {
    pub fn into_resource(self) -> Result<Resource, ModelError> {
        let err = |msg: &str| ModelError::Resource {
            id: self.id.clone(),
            msg: msg.to_string(),
        };
        let spec = match self.kind {
            ResourceKind::Generator => {
                if self.cap_c != 0.0 || self.soc_min.is_some() || self.soc_max.is_some() {
                    return Err(err("generators take no charging or SOC parameters"));
                }
                let mut s = generator_as_esr(&self.id, self.cap_d, 0.0, self.cost_d)?;
                s.ramps.up_d = self.ramp_up_d;
                s.ramps.down_d = self.ramp_down_d.or(self.ramp_up_d);
                s.init_d = self.init_d;
                s
            }
            ResourceKind::Dera => {
                if self.soc_min.is_some() || self.soc_max.is_some() {
                    return Err(err("aggregators take no SOC limits"));
                }
                let ramps = Ramps {
                    up_d: self.ramp_up_d,
                    down_d: self.ramp_down_d,
                    up_c: self.ramp_up_c,
                    down_c: self.ramp_down_c,
                };
                let mut s = dera_as_esr(&self.id, self.cap_c, self.cap_d, ramps, self.cost_c, self.cost_d)?;
                s.soc_init = self.soc_init;
                s.eff_c = self.eff_c;
                s.eff_d = self.eff_d;
                s.init_d = self.init_d;
                s.init_c = self.init_c;
                s
            }
            ResourceKind::Esr => EsrSpec {
                id: self.id.clone(),
                cost_d: self.cost_d,
                cost_c: self.cost_c,
                cap_d: self.cap_d,
                cap_c: self.cap_c,
                ramps: Ramps {
                    up_d: self.ramp_up_d,
                    down_d: self.ramp_down_d,
                    up_c: self.ramp_up_c,
                    down_c: self.ramp_down_c,
                },
                soc_min: self.soc_min,
                soc_max: self.soc_max,
                soc_init: self.soc_init,
                eff_c: self.eff_c,
                eff_d: self.eff_d,
                init_d: self.init_d,
                init_c: self.init_c,
            },
        };
        Ok(Resource {
            truth: spec,
            bid: self.bid,
        })
    }
}

/// Root of a fleet JSON document. `demand` optionally carries a realized
/// demand path of length `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetDoc {
    pub horizon: usize,
    pub window: usize,
    pub resources: Vec<ResourceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<Vec<f64>>,
}

impl FleetDoc {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn fleet(&self) -> Result<Fleet, ModelError> {
        let resources = self
            .resources
            .iter()
            .cloned()
            .map(ResourceDoc::into_resource)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Fleet::new(resources, self.horizon, self.window))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn section_4d_fleet() -> Fleet {
        let mut g1 = generator_as_esr("G1", 500.0, 500.0, 25.0).unwrap();
        g1.init_d = 400.0;
        let g2 = generator_as_esr("G2", 100.0, 50.0, 30.0).unwrap();
        let mut g3 = generator_as_esr("G3", 1.0, 0.8, 28.0).unwrap();
        g3.init_d = 0.2;
        Fleet::new(
            vec![Resource::truthful(g1), Resource::truthful(g2), Resource::truthful(g3)],
            2,
            2,
        )
    }

    #[test]
    fn generator_reduction() {
        let g = generator_as_esr("G1", 500.0, 500.0, 25.0).unwrap();
        assert_eq!(g.cap_c, 0.0);
        assert_eq!(g.cap_d, 500.0);
        assert_eq!(g.ramps.up_d, Some(500.0));
        assert_eq!(g.soc_min, None);
        assert_eq!(g.soc_max, None);
        assert_eq!((g.eff_c, g.eff_d), (1.0, 1.0));
        assert!(!g.has_soc_limits());
    }

    #[test]
    fn null_generator_allowed() {
        let g = generator_as_esr("Z", 0.0, 0.0, 0.0).unwrap();
        assert_eq!(g.cap_d, 0.0);
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(generator_as_esr("G", -1.0, 1.0, 1.0).is_err());
        assert!(generator_as_esr("G", 1.0, -1.0, 1.0).is_err());
        assert!(dera_as_esr("D", -1.0, 1.0, Ramps::UNBOUNDED, 0.0, 1.0).is_err());
        assert!(dera_as_esr("D", 1.0, 1.0, Ramps::symmetric(Some(-1.0), None), 0.0, 1.0).is_err());
    }

    #[test]
    fn dera_has_no_soc_limits() {
        let d = dera_as_esr("D", 5.0, 5.0, Ramps::UNBOUNDED, 10.0, 40.0).unwrap();
        assert!(!d.has_soc_limits());
        assert_eq!(d.cap_c, d.cap_d);
    }

    #[test]
    fn section_4d_fleet_is_valid() {
        assert!(validate_fleet(&section_4d_fleet()).is_empty());
    }

    #[test]
    fn soc_init_below_min_flagged() {
        let mut fleet = section_4d_fleet();
        let mut esr = dera_as_esr("S", 1.0, 1.0, Ramps::UNBOUNDED, 10.0, 40.0).unwrap();
        esr.soc_min = Some(1.0);
        esr.soc_max = Some(5.0);
        esr.soc_init = 0.5;
        fleet.resources.push(Resource::truthful(esr));
        let diags = validate_fleet(&fleet);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("soc_init below soc_min"));
        assert_eq!(diags[0].severity, Severity::Error);
    }

    #[test]
    fn cost_order_warning() {
        let mut fleet = section_4d_fleet();
        let mut esr = dera_as_esr("S", 1.0, 1.0, Ramps::UNBOUNDED, 30.0, 31.0).unwrap();
        esr.eff_c = 0.9;
        esr.eff_d = 0.9;
        fleet.resources.push(Resource::truthful(esr));
        let diags = validate_fleet(&fleet);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert!(diags[0].message.contains("complementarity relaxation may fail"));
        assert!(!has_errors(&diags));
    }

    #[test]
    fn validation_is_pure() {
        let mut fleet = section_4d_fleet();
        fleet.window = 5;
        assert_eq!(validate_fleet(&fleet), validate_fleet(&fleet));
        assert!(has_errors(&validate_fleet(&fleet)));
    }

    #[test]
    fn duplicate_ids_flagged() {
        let mut fleet = section_4d_fleet();
        fleet.resources.push(fleet.resources[0].clone());
        assert!(validate_fleet(&fleet).iter().any(|d| d.message == "duplicate id"));
    }

    #[test]
    fn bid_overrides_apply() {
        let g = generator_as_esr("G3", 1.0, 0.8, 28.0).unwrap();
        let r = Resource {
            truth: g,
            bid: BidParameters {
                cost_d: Some(29.0),
                ramp_up_d: Some(Some(0.5)),
                ramp_down_d: Some(None),
                ..Default::default()
            },
        };
        let b = r.bid_spec();
        assert_eq!(b.cost_d, 29.0);
        assert_eq!(b.ramps.up_d, Some(0.5));
        assert_eq!(b.ramps.down_d, None);
        assert_eq!(r.truth.cost_d, 28.0);
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let text = r#"{"horizon": 2, "window": 2, "resources": [
            {"id": "G1", "kind": "generator", "cost_d": 25, "cap_d": 500, "ramp_up_d": 500, "init_d": 400},
            {"id": "S", "kind": "esr", "cost_d": 40, "cost_c": 20, "cap_d": 5, "cap_c": 5,
             "soc_min": 0.1, "soc_max": 25, "soc_init": 0.1, "eff_c": 0.95, "eff_d": 0.95,
             "bid": {"ramp_up_d": null, "cost_d": 41}}
        ]}"#;
        let doc = FleetDoc::from_json(text).unwrap();
        let fleet = doc.fleet().unwrap();
        assert_eq!(fleet.resources[0].truth.ramps.down_d, Some(500.0));
        assert_eq!(fleet.resources[0].truth.init_d, 400.0);
        assert_eq!(fleet.resources[1].bid.ramp_up_d, Some(None));
        assert_eq!(fleet.resources[1].bid.ramp_down_d, None);
        assert_eq!(fleet.resources[1].bid_spec().cost_d, 41.0);
        assert!(validate_fleet(&fleet).is_empty());

        let bad = text.replace("\"cap_d\": 500", "\"cap_d\": 500, \"colour\": 1");
        assert!(FleetDoc::from_json(&bad).is_err());
    }

    #[test]
    fn per_interval_bid_curve() {
        let c = BidCurve {
            coefficient: 10.0,
            overrides: vec![None, Some(12.0)],
        };
        assert_eq!(c.at(0), 10.0);
        assert_eq!(c.at(1), 12.0);
        assert_eq!(c.at(5), 10.0);
        assert_eq!(c.cost(1, 2.0), 24.0);
    }
}
