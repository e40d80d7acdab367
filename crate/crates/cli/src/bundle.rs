//! Run bundles: self-describing output directories holding a manifest, the
//! exact scenario document that produced the run, and newline-delimited
//! records. Every number written to a bundle must be finite; the manifest is
//! the only file carrying a timestamp, so the data files are byte-stable
//! across reruns with the same seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use ucsim_core::belief::BeliefState;
use ucsim_core::simulator::{LearningTrace, TraceStep};

use crate::scenario::ScenarioFile;
use crate::Failure;

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const TRACE_FILE: &str = "trace.ndjson";
pub const SNAPSHOT_FILE: &str = "belief_snapshots.ndjson";
pub const REALIZED_FILE: &str = "realized.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VALUE_FIELD_FILE: &str = "value_field.json";
pub const RESIDUALS_FILE: &str = "residuals.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub scenario_digest: String,
    pub seed: u64,
    pub created_unix: u64,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(scenario_bytes: &[u8], seed: u64, files: &[(&str, &str)]) -> Manifest {
        Manifest {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            scenario_digest: sha256_hex(scenario_bytes),
            seed,
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            files: files
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

/// Post-episode belief snapshot: candidate weights and parameters plus the
/// exposure field with its grid, prefixed by a headline exposure summary.
#[derive(Debug, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub episode: usize,
    pub exposure_min: f64,
    pub exposure_mean: f64,
    pub exposure_max: f64,
    pub belief: BeliefState,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RealizedDoc {
    pub value: f64,
    pub tail_bound: f64,
    pub episodes: usize,
    pub final_state: Vec<f64>,
    pub halted: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

// serde_json numbers are finite by construction; a non-finite f64 turns into
// null during serialization. Rejecting unexpected nulls is therefore exactly
// the finiteness guarantee for the written document.
fn reject_nulls(v: &Value, path: &str, allow_null: &[&str]) -> Result<(), Failure> {
    match v {
        Value::Null => {
            if allow_null.iter().any(|a| path.ends_with(a)) {
                Ok(())
            } else {
                Err(Failure::check(format!(
                    "refusing to write non-finite number at {path}"
                )))
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                reject_nulls(item, &format!("{path}/{i}"), allow_null)?;
            }
            Ok(())
        }
        Value::Object(map) => {
            for (k, item) in map {
                reject_nulls(item, &format!("{path}/{k}"), allow_null)?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn finite_value<T: Serialize>(item: &T, allow_null: &[&str]) -> Result<Value, Failure> {
    let v = serde_json::to_value(item)
        .map_err(|e| Failure::check(format!("cannot serialize record: {e}")))?;
    reject_nulls(&v, "", allow_null)?;
    Ok(v)
}

pub fn write_json<T: Serialize>(
    path: &Path,
    item: &T,
    allow_null: &[&str],
) -> Result<(), Failure> {
    let v = finite_value(item, allow_null)?;
    let mut text = serde_json::to_string_pretty(&v)
        .map_err(|e| Failure::check(format!("cannot serialize record: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_ndjson<T: Serialize>(
    path: &Path,
    items: &[T],
    allow_null: &[&str],
) -> Result<(), Failure> {
    let mut out = String::new();
    for item in items {
        let v = finite_value(item, allow_null)?;
        let line = serde_json::to_string(&v)
            .map_err(|e| Failure::check(format!("cannot serialize record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn read_to_string(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

pub fn create_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_run_bundle(
    dir: &Path,
    scenario_bytes: &[u8],
    seed: u64,
    trace: &LearningTrace,
    snapshots: &[SnapshotLine],
    realized: &RealizedDoc,
) -> Result<(), Failure> {
    create_out_dir(dir)?;
    std::fs::write(dir.join(SCENARIO_FILE), scenario_bytes)
        .map_err(|e| Failure::io(format!("cannot write scenario copy: {e}")))?;
    write_ndjson(&dir.join(TRACE_FILE), &trace.steps, &[])?;
    write_ndjson(&dir.join(SNAPSHOT_FILE), snapshots, &[])?;
    write_json(&dir.join(REALIZED_FILE), realized, &["/halted"])?;
    let manifest = Manifest::new(
        scenario_bytes,
        seed,
        &[
            ("scenario", SCENARIO_FILE),
            ("trace", TRACE_FILE),
            ("belief_snapshots", SNAPSHOT_FILE),
            ("realized", REALIZED_FILE),
        ],
    );
    write_json(&dir.join(MANIFEST_FILE), &manifest, &[])
}

pub struct LoadedBundle {
    pub scenario_file: ScenarioFile,
    pub manifest: Manifest,
    pub trace: LearningTrace,
}

fn bundle_file(dir: &Path, manifest: &Manifest, key: &str) -> Result<PathBuf, Failure> {
    let name = manifest
        .files
        .get(key)
        .ok_or_else(|| Failure::io(format!("manifest lists no \"{key}\" file")))?;
    Ok(dir.join(name))
}

fn parse_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Failure> {
    let raw = read_to_string(path)?;
    let mut items = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(line).map_err(|e| {
            Failure::io(format!(
                "cannot parse {} line {}: {e}",
                path.display(),
                i + 1
            ))
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Loads a simulate bundle back into memory, verifying the scenario digest
/// and reconstructing the final belief from the last exposure snapshot.
pub fn read_run_bundle(dir: &Path) -> Result<LoadedBundle, Failure> {
    let manifest_raw = read_to_string(&dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&manifest_raw)
        .map_err(|e| Failure::io(format!("cannot parse bundle manifest: {e}")))?;

    let scenario_path = bundle_file(dir, &manifest, "scenario")?;
    let scenario_bytes = std::fs::read(&scenario_path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", scenario_path.display())))?;
    if sha256_hex(&scenario_bytes) != manifest.scenario_digest {
        return Err(Failure::check(
            "scenario digest does not match the manifest; the bundle was modified".to_string(),
        ));
    }
    let text = std::str::from_utf8(&scenario_bytes)
        .map_err(|e| Failure::io(format!("bundled scenario is not valid UTF-8: {e}")))?;
    let scenario_file: ScenarioFile = toml::from_str(text)
        .map_err(|e| Failure::io(format!("cannot parse bundled scenario: {e}")))?;

    let steps: Vec<TraceStep> = parse_ndjson(&bundle_file(dir, &manifest, "trace")?)?;
    let snapshots: Vec<SnapshotLine> = parse_ndjson(&bundle_file(dir, &manifest, "belief_snapshots")?)?;
    let realized_raw = read_to_string(&bundle_file(dir, &manifest, "realized")?)?;
    let realized: RealizedDoc = serde_json::from_str(&realized_raw)
        .map_err(|e| Failure::io(format!("cannot parse realized summary: {e}")))?;

    let final_belief = match snapshots.last() {
        None => scenario_file.build_belief()?,
        Some(s) => s.belief.clone(),
    };

    Ok(LoadedBundle {
        scenario_file,
        manifest,
        trace: LearningTrace {
            steps,
            halted: realized.halted,
            final_state: realized.final_state,
            final_belief,
        },
    })
}
