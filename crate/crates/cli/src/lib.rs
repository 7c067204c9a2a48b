//! Configuration-driven experiment runner.

pub mod config;
pub mod presets;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{Preset, RunConfig};
use presets::{Artifact, Stage, VerdictEntry};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nkit_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(nkit_core::Error::NonConvergence(_)) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub experiment: Preset,
    pub threads: Option<usize>,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub verdicts: Vec<VerdictSummary>,
    pub files: Vec<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictSummary {
    pub name: String,
    pub pass: bool,
    pub gated: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub manifest: RunManifest,
    pub verdicts: Vec<VerdictEntry>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.manifest.pass {
            0
        } else {
            1
        }
    }
}

/// SHA-256 of the canonical JSON form of the parsed configuration.
pub fn config_hash(config: &RunConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {t} threads: {e}")))?
            .install(f),
        None => f(),
    }
}

/// Runs the experiment in `config_path`. Outputs go to `output_override` or
/// the configured directory and are written only after every stage
/// succeeded.
pub fn run(config_path: &Path, output_override: Option<&Path>) -> Result<RunSummary, CliError> {
    let config = RunConfig::load(config_path)?;
    run_config(config, output_override)
}

pub fn run_config(config: RunConfig, output_override: Option<&Path>) -> Result<RunSummary, CliError> {
    let threads = config.effective_threads()?;
    let hash = config_hash(&config);
    let output_dir = output_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.clone());
    let (prepared, outcome) = with_threads(threads, || {
        let prepared = presets::prepare(config)?;
        let outcome = presets::execute(&prepared)?;
        Ok((prepared, outcome))
    })?;
    let pass = outcome.verdicts.iter().all(|v| v.pass || !v.gated);
    let mut files = Vec::new();
    fs::create_dir_all(&output_dir)?;
    for a in &outcome.artifacts {
        match a {
            Artifact::Text { name, body } => {
                fs::write(output_dir.join(name), body)?;
                files.push(name.clone());
            }
            Artifact::Field { stem, field, meta } => {
                nkit_core::io::save_field(field, &output_dir.join(stem), meta.clone())?;
                files.push(format!("{stem}.bin"));
                files.push(format!("{stem}.json"));
            }
        }
    }
    let verdict_json = serde_json::to_string_pretty(&outcome.verdicts).expect("verdicts serialize");
    fs::write(output_dir.join("verdicts.json"), verdict_json + "\n")?;
    files.push("verdicts.json".into());
    let manifest = RunManifest {
        config_hash: hash,
        version: VERSION.to_string(),
        experiment: prepared.config.experiment,
        threads,
        seed: prepared.config.seed,
        stages: outcome.stages,
        verdicts: outcome
            .verdicts
            .iter()
            .map(|v| VerdictSummary {
                name: v.name.clone(),
                pass: v.pass,
                gated: v.gated,
            })
            .collect(),
        files,
        pass,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(output_dir.join("manifest.json"), text + "\n")?;
    Ok(RunSummary {
        output_dir,
        manifest,
        verdicts: outcome.verdicts,
    })
}

/// Writes the nonzeros of the configured operator: the coefficient with `k`,
/// or the background diffusion operator of the medium.
pub fn dump_matrix(config_path: &Path, out: impl Write) -> Result<(), CliError> {
    let config = RunConfig::load(config_path)?;
    let prepared = presets::prepare(config)?;
    let op = if let Some(m) = &prepared.medium {
        m.operator().clone()
    } else if let (Some(g), Some(k)) = (&prepared.gamma, prepared.config.k) {
        nkit_core::assemble(g, k)?
    } else {
        return Err(CliError::Config(
            "dump-matrix needs `coefficient` with `k`, or `medium`".into(),
        ));
    };
    op.dump_matrix(out)?;
    Ok(())
}

pub fn preset_names() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}
