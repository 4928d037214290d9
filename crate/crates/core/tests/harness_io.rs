use std::path::Path;

use dispatch_core::harness::{
    export_results, run_case, CaseSpec, Experiment, ExperimentConfig, GridConfig, PointForecast, MONTE_CARLO_FLEET_JSON,
};
use dispatch_core::model::FleetDoc;
use dispatch_core::scenario::shipped_profile;

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn small(case: u8, sigmas: &[f64], scenarios: usize, trials: usize) -> Experiment {
    let fleet = FleetDoc::from_json(MONTE_CARLO_FLEET_JSON).unwrap().fleet().unwrap();
    let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
        "case": case, "fleet": "mc_fleet.json", "scenarios": scenarios, "sigmas": sigmas, "trials": trials, "seed": 11,
    }))
    .unwrap();
    Experiment::new(config, fleet, shipped_profile()).unwrap()
}

#[test]
fn shipped_case_configs_load() {
    for case in 1..=4u8 {
        let exp = Experiment::load(configs().join(format!("case{case}.json"))).unwrap();
        assert_eq!(exp.config.case, CaseSpec::Numbered(case));
        assert_eq!(exp.config.horizon, 24);
        assert_eq!(exp.config.window, 4);
        assert_eq!(exp.config.sigmas, vec![0.001, 0.01, 0.03]);
        assert_eq!(exp.config.point_forecast, PointForecast::Sampled);
        let has_storage = exp.fleet.resources.iter().any(|r| r.truth.is_storage());
        assert_eq!(has_storage, case >= 3);
    }
}

#[test]
fn shipped_grid_config_runs() {
    let surface = GridConfig::load(&configs().join("grid_calibrated.json")).unwrap().run().unwrap();
    assert_eq!(surface.points.len(), 13);
    assert_eq!(surface.points[0].len(), 9);
}

#[test]
fn unknown_config_keys_rejected() {
    let r: Result<ExperimentConfig, _> =
        serde_json::from_str(r#"{"case": 1, "fleet": "f.json", "sigmas": [0.01], "trails": 5}"#);
    assert!(r.is_err());
}

#[test]
fn invalid_config_values_rejected() {
    let fleet = FleetDoc::from_json(MONTE_CARLO_FLEET_JSON).unwrap().fleet().unwrap();
    for bad in [
        serde_json::json!({"case": 5, "fleet": "f", "sigmas": [0.01]}),
        serde_json::json!({"case": 1, "fleet": "f", "sigmas": []}),
        serde_json::json!({"case": 1, "fleet": "f", "sigmas": [-0.1]}),
        serde_json::json!({"case": 1, "fleet": "f", "sigmas": [0.01], "trials": 0}),
    ] {
        let config: ExperimentConfig = serde_json::from_value(bad).unwrap();
        assert!(Experiment::new(config, fleet.clone(), shipped_profile()).is_err());
    }
}

#[test]
fn deterministic_and_stochastic_agree_without_forecast_error() {
    let det = run_case(&small(1, &[0.0], 1, 3)).unwrap();
    let sto = run_case(&small(2, &[0.0], 1, 3)).unwrap();
    let (a, b) = (&det.sigmas[0].summary, &sto.sigmas[0].summary);
    assert_eq!(a.n_failed, 0);
    assert!((a.loc_lmp_total.mean - b.loc_lmp_total.mean).abs() < 1e-6);
    assert!((a.ms_tlmp.mean - b.ms_tlmp.mean).abs() < 1e-6);
}

#[test]
fn export_schema() {
    let result = run_case(&small(4, &[0.01, 0.03], 4, 3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_results(&result, dir.path()).unwrap();
    let names: Vec<_> = manifest.files.keys().cloned().collect();
    assert_eq!(names, ["settlement.csv", "summary.csv", "summary.json", "trace.csv"]);

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("case,sigma,metric,mean,stderr,n"));
    assert_eq!(lines.count(), 2 * 7);

    let settlement = std::fs::read_to_string(dir.path().join("settlement.csv")).unwrap();
    assert!(settlement.starts_with("sigma,trial,resource,scheme,in_market,loc,total\n"));
    assert!(settlement.lines().any(|l| l.contains(",ISO,lmp,")));

    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("sigma,trial,t,resource,demand,g_d,g_c,soc,lmp,tlmp_c,tlmp_d,phi,delta_c,delta_d\n"));
    assert_eq!(trace.lines().count(), 1 + 2 * 3 * 24 * 4);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let sigmas = json["sigmas"].as_array().unwrap();
    assert_eq!(sigmas.len(), 2);
    assert_eq!(sigmas[0]["n_trials"], 3);

    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(stored["seed"], 11);
}
