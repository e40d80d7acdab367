#![forbid(unsafe_code)]

//! Command-line front end: runs closed-loop learning scenarios, solves the
//! stationary grid equation, replays recorded bundles, and drives the
//! certification suite. Exit code 1 means a check or validation failed on
//! well-formed inputs; exit code 2 means the inputs themselves could not be
//! read or parsed.

mod bundle;
mod scenario;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use ucsim_core::hjb::{hjb_residual, solve_hjb};
use ucsim_core::simulator::{realized_cost, replay, run_learning_loop_with};
use ucsim_core::verify::{
    run_all, CheckKind, CheckStatus, Fault, SuiteConfig, Tolerances, VerificationReport,
};

use bundle::{RealizedDoc, SnapshotLine};
use scenario::ScenarioFile;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    /// Input could not be read or parsed.
    pub fn io(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    /// Well-formed input failed validation, construction, or a check.
    pub fn check(err: impl std::fmt::Display) -> Failure {
        Failure {
            code: 1,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ucsim",
    version,
    about = "Closed-loop simulation and certification for control under model uncertainty"
)]
struct Cli {
    /// Worker threads for grid sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the learning loop for a scenario and write a replayable bundle.
    Simulate {
        /// Scenario document (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the stationary value equation for the scenario's anchor
    /// dynamics and write the value field with residual statistics.
    SolveHjb {
        /// Scenario document with an [hjb] section.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the certification suite over a run-set document.
    Verify {
        /// Run-set document listing named suite configurations.
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory for report.json.
        #[arg(long)]
        out: PathBuf,
        /// Override every run's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated tolerance overrides, e.g. "tail_tol=1e-4,refine_hi=0.9".
        #[arg(long)]
        tol_overrides: Option<String>,
    },
    /// Re-run a bundle's scenario and compare against its recorded trace.
    Replay {
        /// Bundle directory written by simulate.
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Simulate {
            scenario,
            out,
            seed,
        } => cmd_simulate(&scenario, &out, seed),
        Cmd::SolveHjb { scenario, out } => cmd_solve_hjb(&scenario, &out),
        Cmd::Verify {
            scenario,
            out,
            seed,
            tol_overrides,
        } => cmd_verify(&scenario, &out, seed, tol_overrides.as_deref()),
        Cmd::Replay { bundle } => cmd_replay(&bundle),
    }
}

fn cmd_simulate(path: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let (file, bytes) = ScenarioFile::load(path)?;
    let s = file.to_scenario(seed)?;
    s.validate(200).map_err(Failure::check)?;

    let mut snapshots: Vec<SnapshotLine> = Vec::new();
    let trace = run_learning_loop_with(&s, |step, belief| {
        let summary = belief.exposure.summary();
        snapshots.push(SnapshotLine {
            episode: step.episode,
            exposure_min: summary.min,
            exposure_mean: summary.mean,
            exposure_max: summary.max,
            belief: belief.clone(),
        });
        Ok(())
    })
    .map_err(Failure::check)?;

    let realized = realized_cost(&trace, &s);
    let doc = RealizedDoc {
        value: realized.value,
        tail_bound: realized.tail_bound,
        episodes: trace.steps.len(),
        final_state: trace.final_state.clone(),
        halted: trace.halted.clone(),
    };
    bundle::write_run_bundle(out, &bytes, s.seed, &trace, &snapshots, &doc)?;

    if let Some(reason) = &trace.halted {
        eprintln!("note: run halted early: {reason}");
    }
    println!(
        "simulate: {} of {} episodes, realized cost {:.6} (tail bound {:.3e}), bundle at {}",
        trace.steps.len(),
        s.n_episodes,
        doc.value,
        doc.tail_bound,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ResidualDoc {
    max: f64,
    median: f64,
    interior_nodes: usize,
}

fn cmd_solve_hjb(path: &Path, out: &Path) -> Result<(), Failure> {
    let (file, bytes) = ScenarioFile::load(path)?;
    let inputs = file.hjb_inputs()?;
    let vf = solve_hjb(
        &inputs.field,
        inputs.field.state_lipschitz(),
        &inputs.cost,
        &inputs.discount,
        &inputs.grid,
        &inputs.cgrid,
        &inputs.settings,
    )
    .map_err(Failure::check)?;
    let res = hjb_residual(&vf, &inputs.field, &inputs.cost, &inputs.cgrid)
        .map_err(Failure::check)?;

    bundle::create_out_dir(out)?;
    std::fs::write(out.join(bundle::SCENARIO_FILE), &bytes)
        .map_err(|e| Failure::io(format!("cannot write scenario copy: {e}")))?;
    bundle::write_json(&out.join(bundle::VALUE_FIELD_FILE), &vf, &[])?;
    bundle::write_json(
        &out.join(bundle::RESIDUALS_FILE),
        &ResidualDoc {
            max: res.max,
            median: res.median,
            interior_nodes: res.interior_nodes,
        },
        &[],
    )?;
    let manifest = bundle::Manifest::new(
        &bytes,
        file.seed,
        &[
            ("scenario", bundle::SCENARIO_FILE),
            ("value_field", bundle::VALUE_FIELD_FILE),
            ("residuals", bundle::RESIDUALS_FILE),
        ],
    );
    bundle::write_json(&out.join(bundle::MANIFEST_FILE), &manifest, &[])?;

    println!(
        "solve-hjb: {} nodes, {} sweeps, converged {}, sweep residual {:.3e}, interior defect max {:.3e} median {:.3e}",
        vf.grid.node_count(),
        vf.iterations,
        vf.converged,
        vf.sup_residual,
        res.max,
        res.median
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySet {
    #[serde(default)]
    run: Vec<VerifyRunSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyRunSection {
    name: String,
    #[serde(default)]
    seed: u64,
    /// Planted defects to activate; kebab-case names.
    #[serde(default)]
    faults: Vec<Fault>,
    /// Checks to run; empty means the full suite.
    #[serde(default)]
    checks: Vec<CheckKind>,
    /// Swap the dpp check's belief for one with untested candidates.
    #[serde(default)]
    dpp_fresh_belief: bool,
    #[serde(default)]
    tolerances: toml::Table,
}

#[derive(Serialize)]
struct RunReport {
    name: String,
    seed: u64,
    report: VerificationReport,
}

fn toml_number(key: &str, v: &toml::Value) -> Result<f64, Failure> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Failure::io(format!("tolerance \"{key}\" must be a number"))),
    }
}

fn apply_tolerance(t: &mut Tolerances, key: &str, value: f64) -> Result<(), Failure> {
    let slot = match key {
        "tail_tol" => &mut t.tail_tol,
        "quadrature_step" => &mut t.quadrature_step,
        "scaling_base" => &mut t.scaling_base,
        "planner_tol" => &mut t.planner_tol,
        "lipschitz_slack" => &mut t.lipschitz_slack,
        "regularity_floor" => &mut t.regularity_floor,
        "lsc_slack" => &mut t.lsc_slack,
        "residual_factor" => &mut t.residual_factor,
        "refine_lo" => &mut t.refine_lo,
        "refine_hi" => &mut t.refine_hi,
        "learning_tol" => &mut t.learning_tol,
        "subdiff_tol" => &mut t.subdiff_tol,
        "chatter_band" => &mut t.chatter_band,
        "chatter_fit_slack" => &mut t.chatter_fit_slack,
        _ => return Err(Failure::io(format!("unknown tolerance key \"{key}\""))),
    };
    *slot = value;
    Ok(())
}

fn parse_tol_overrides(spec: &str) -> Result<Vec<(String, f64)>, Failure> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, raw) = part.split_once('=').ok_or_else(|| {
            Failure::io(format!("tolerance override \"{part}\" is not key=value"))
        })?;
        let value: f64 = raw.trim().parse().map_err(|_| {
            Failure::io(format!("tolerance override \"{part}\" has a non-numeric value"))
        })?;
        out.push((key.trim().to_string(), value));
    }
    Ok(out)
}

fn cmd_verify(
    path: &Path,
    out: &Path,
    seed: Option<u64>,
    tol_spec: Option<&str>,
) -> Result<(), Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Failure::io(format!("{} is not valid UTF-8: {e}", path.display())))?;
    let set: VerifySet = toml::from_str(text)
        .map_err(|e| Failure::io(format!("cannot parse {}: {e}", path.display())))?;
    let overrides = match tol_spec {
        Some(spec) => parse_tol_overrides(spec)?,
        None => Vec::new(),
    };

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for run in &set.run {
        let mut tolerances = Tolerances::default();
        for (key, value) in &run.tolerances {
            apply_tolerance(&mut tolerances, key, toml_number(key, value)?)?;
        }
        for (key, value) in &overrides {
            apply_tolerance(&mut tolerances, key, *value)?;
        }
        let cfg = SuiteConfig {
            seed: seed.unwrap_or(run.seed),
            tolerances,
            faults: run.faults.clone(),
            checks: if run.checks.is_empty() {
                None
            } else {
                Some(run.checks.clone())
            },
            dpp_fresh_belief: run.dpp_fresh_belief,
        };
        let report = run_all(&cfg);
        let n_pass = report.outcomes.iter().filter(|o| o.passed()).count();
        let n_na = report
            .outcomes
            .iter()
            .filter(|o| matches!(o.status, CheckStatus::NotApplicable { .. }))
            .count();
        let secs: f64 = report.outcomes.iter().map(|o| o.runtime_secs).sum();
        let failed = report.failed_names();
        println!(
            "verify {}: {} pass, {} not applicable, {} fail ({:.1}s)",
            run.name,
            n_pass,
            n_na,
            failed.len(),
            secs
        );
        for name in &failed {
            failures.push(format!("{}/{}", run.name, name));
        }
        reports.push(RunReport {
            name: run.name.clone(),
            seed: cfg.seed,
            report,
        });
    }

    bundle::create_out_dir(out)?;
    bundle::write_json(
        &out.join(bundle::REPORT_FILE),
        &reports,
        &["/observed", "/threshold"],
    )?;
    let manifest = bundle::Manifest::new(
        &bytes,
        seed.unwrap_or(0),
        &[("run_set", bundle::SCENARIO_FILE), ("report", bundle::REPORT_FILE)],
    );
    std::fs::write(out.join(bundle::SCENARIO_FILE), &bytes)
        .map_err(|e| Failure::io(format!("cannot write run-set copy: {e}")))?;
    bundle::write_json(&out.join(bundle::MANIFEST_FILE), &manifest, &[])?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::check(format!(
            "checks failed: {}",
            failures.join(", ")
        )))
    }
}

fn cmd_replay(dir: &Path) -> Result<(), Failure> {
    let loaded = bundle::read_run_bundle(dir)?;
    let s = loaded
        .scenario_file
        .to_scenario(Some(loaded.manifest.seed))?;
    s.validate(200).map_err(Failure::check)?;
    let report = replay(&loaded.trace, &s).map_err(Failure::check)?;
    if report.matches {
        println!(
            "replay: {} episodes match within {:.1e}",
            report.episodes_compared, report.tolerance
        );
        Ok(())
    } else {
        let detail = match report.first_divergence {
            Some(d) => format!("episode {}: {} differs by {:.3e}", d.episode, d.what, d.magnitude),
            None => "structural mismatch".to_string(),
        };
        Err(Failure::check(format!("replay diverged: {detail}")))
    }
}
