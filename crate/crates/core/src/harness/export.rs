use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::montecarlo::{run_case, CaseResult, Stat};
use super::{Experiment, HarnessError};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything needed to rerun an experiment and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub experiment: Experiment,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SummaryJson<'a> {
    case: String,
    sigmas: Vec<&'a super::SigmaSummary>,
}

fn trace_csv(result: &CaseResult) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut any = false;
    for s in &result.sigmas {
        for t in &s.trials {
            if let Ok(m) = &t.result {
                for row in &m.trace {
                    w.serialize(row)?;
                    any = true;
                }
            }
        }
    }
    if !any {
        w.write_record([
            "sigma", "trial", "t", "resource", "demand", "g_d", "g_c", "soc", "lmp", "tlmp_c", "tlmp_d", "phi", "delta_c",
            "delta_d",
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

fn settlement_csv(result: &CaseResult) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sigma", "trial", "resource", "scheme", "in_market", "loc", "total"])?;
    for s in &result.sigmas {
        for t in &s.trials {
            let Ok(m) = &t.result else { continue };
            for rep in &m.settlements {
                let label = rep.scheme.label();
                for r in &rep.resources {
                    w.serialize((s.sigma, t.trial, &r.id, label, r.in_market, r.loc, r.total_profit))?;
                }
                w.serialize((s.sigma, t.trial, "ISO", label, rep.surplus_before_uplift, 0.0, rep.merchandising_surplus))?;
            }
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Long format: one row per (σ, metric).
fn summary_csv(result: &CaseResult) -> Result<Vec<u8>, HarnessError> {
    let case = result.experiment.config.case.label();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["case", "sigma", "metric", "mean", "stderr", "n"])?;
    for s in &result.sigmas {
        let m = &s.summary;
        let stats: [(&str, Stat); 7] = [
            ("loc_lmp_total", m.loc_lmp_total),
            ("loc_lmp_generators", m.loc_lmp_generators),
            ("loc_lmp_storage", m.loc_lmp_storage),
            ("loc_tlmp_total", m.loc_tlmp_total),
            ("ms_lmp", m.ms_lmp),
            ("ms_lmp_before_uplift", m.ms_lmp_before_uplift),
            ("ms_tlmp", m.ms_tlmp),
        ];
        for (name, st) in stats {
            w.serialize((&case, s.sigma, name, st.mean, st.stderr, st.n))?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Writes `trace.csv`, `settlement.csv`, `summary.csv`, `summary.json` and
/// `manifest.json` into `out`.
pub fn export_results(result: &CaseResult, out: &Path) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(out)?;
    let summary = SummaryJson {
        case: result.experiment.config.case.label(),
        sigmas: result.sigmas.iter().map(|s| &s.summary).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    let files = [
        ("trace.csv", trace_csv(result)?),
        ("settlement.csv", settlement_csv(result)?),
        ("summary.csv", summary_csv(result)?),
        ("summary.json", json),
    ];
    let mut hashes = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(out.join(name), bytes)?;
        hashes.insert(name.to_string(), sha256_hex(bytes));
    }
    let exp = &result.experiment;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: sha256_hex(&serde_json::to_vec(&exp.config)?),
        seed: exp.config.seed,
        experiment: exp.clone(),
        files: hashes,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(out.join("manifest.json"), bytes)?;
    Ok(manifest)
}

/// Reruns the experiment stored in a manifest and exports into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<Manifest, HarnessError> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(manifest)?)?;
    if sha256_hex(&serde_json::to_vec(&m.experiment.config)?) != m.config_sha256 {
        return Err(HarnessError::Config("manifest config hash mismatch".into()));
    }
    let result = run_case(&m.experiment)?;
    export_results(&result, out)
}
