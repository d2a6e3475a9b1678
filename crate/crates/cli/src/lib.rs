//! Experiment driver: generate an ensemble, compute correspondences with
//! each configured method, evaluate the resulting shape models, validate
//! ostium measurements against ground truth and summarise the comparison.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::RunDir;
pub use report::RunReport;

/// `--out` if given, else the config's `output`.
pub fn output_dir(config: &ExperimentConfig, out: Option<&Path>) -> Result<PathBuf> {
    out.map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set `output`".into()))
}

/// All stages in order. Per-method failures are recorded in the report and
/// do not stop the other methods.
pub fn run_config(config: &ExperimentConfig, config_text: &str, out: &Path) -> Result<RunReport> {
    let run = RunDir::new(out);
    pipeline::generate(&run, config, config_text)?;
    pipeline::correspond(&run, config)?;
    pipeline::evaluate(&run, config)?;
    pipeline::validate(&run, config)?;
    report::report(&run)
}

pub fn run(config_path: impl AsRef<Path>, out: Option<&Path>) -> Result<RunReport> {
    let (config, text) = ExperimentConfig::load(config_path)?;
    let out = output_dir(&config, out)?;
    run_config(&config, &text, &out)
}
