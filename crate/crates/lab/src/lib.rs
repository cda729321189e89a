//! Experiment runner: reads a config, runs one named experiment on top of
//! `nelson-core`, writes a report, data files and a manifest.

pub mod config;
pub mod experiments;
mod plot;
pub mod report;

use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{validate, validate_text, ExperimentConfig, Violation, EXPERIMENTS};
pub use report::{Artifact, Bound, Metric, RunReport};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid config: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Config(Vec<Violation>),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LabError {
    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::UnknownExperiment(_) => 2,
            _ => 1,
        }
    }
}

/// Validate, run and write every artifact under the configured directory.
/// Nothing is written when validation fails.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport, LabError> {
    let violations = validate(cfg);
    if !violations.is_empty() {
        return Err(LabError::Config(violations));
    }
    let cfg = cfg.resolved();
    let start = Instant::now();
    let outcome = experiments::execute(&cfg)?;
    let duration_s = start.elapsed().as_secs_f64();

    let dir = cfg.output_dir.clone().expect("resolved");
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| LabError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut artifacts = Vec::with_capacity(outcome.files.len());
    for (name, bytes) in &outcome.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(io(&path))?;
        artifacts.push(Artifact {
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", Sha256::digest(bytes)),
        });
    }
    let passed = outcome.metrics.iter().all(|m| m.pass);
    let report = RunReport {
        experiment: cfg.experiment.clone(),
        config: cfg,
        metrics: outcome.metrics,
        passed,
        results: outcome.results,
        duration_s,
        artifacts,
    };
    let report_path = dir.join("report.json");
    fs::write(&report_path, serde_json::to_vec_pretty(&report).expect("report serializes")).map_err(io(&report_path))?;
    let mut files: Vec<serde_json::Value> = report
        .artifacts
        .iter()
        .map(|a| serde_json::to_value(a).expect("artifact serializes"))
        .collect();
    files.push(serde_json::json!({ "path": "report.json" }));
    let manifest = serde_json::json!({
        "experiment": report.experiment,
        "passed": report.passed,
        "files": files,
    });
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))
        .map_err(io(&manifest_path))?;
    Ok(report)
}

/// [`run`] inside a dedicated pool of `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<RunReport, LabError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| LabError::Pool(e.to_string()))?;
    pool.install(|| run(cfg))
}
