//! Configuration-driven runner for the jumpkit experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::Path;

pub use config::{Experiment, ExperimentConfig};
pub use output::{Cell, Table};

pub const THREADS_ENV: &str = "JUMPKIT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(#[from] jumpkit::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

pub fn load(config_path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", config_path.display()))))?;
    ExperimentConfig::parse(&text)
}

/// Worker pool honouring `JUMPKIT_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))
}

/// Runs the experiment and writes its tables plus the manifest.
pub fn run_config(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let pool = thread_pool()?;
    let tables = pool.install(|| experiments::run(cfg))?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut written = Vec::with_capacity(tables.len() + 1);
    for t in &tables {
        let name = format!("{}_{}.csv", cfg.experiment.name(), t.name);
        fs::write(cfg.output_dir.join(&name), t.to_csv())?;
        written.push(name);
    }
    fs::write(cfg.output_dir.join("manifest"), cfg.manifest())?;
    written.push("manifest".into());
    Ok(written)
}
