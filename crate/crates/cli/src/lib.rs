//! Experiment runner behind the `arex` binary.
//!
//! Every command resolves its configuration, writes a snapshot of it and a
//! [`RunManifest`] into the output directory, runs, and finalizes the
//! manifest. Apart from the manifest, all outputs depend only on the
//! snapshot, so a rerun with `--config <out>/config.toml` reproduces them
//! byte for byte.

mod check;
mod manifest;
mod noharm;
mod rrm;

use std::fs;
use std::path::{Path, PathBuf};

use arex::dataio::{ExperimentConfig, ExperimentKind};
use arex::{Error, Result};

pub use check::{tangent_walkthrough, print_examples, run_check, CheckOutcome, Walkthrough};
pub use manifest::{RunManifest, RunStatus, Timing};
pub use noharm::{run_noharm, summarize, NoharmOutcome, UtilitySummary};
pub use rrm::{run_credit_rrm, run_synthetic_rrm, ArmOutcome, RrmOutcome};

/// Default output root when neither `--out` nor the config names a directory.
pub const OUTPUT_ROOT_ENV: &str = "AREX_OUTPUT_ROOT";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Noharm,
    SyntheticRrm,
    CreditRrm,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Noharm => "noharm",
            Command::SyntheticRrm => "synthetic-rrm",
            Command::CreditRrm => "credit-rrm",
            Command::Check => "check",
        }
    }

    pub fn kind(self) -> ExperimentKind {
        match self {
            Command::Noharm => ExperimentKind::Noharm,
            Command::SyntheticRrm => ExperimentKind::SyntheticRrm,
            Command::CreditRrm => ExperimentKind::CreditRrm,
            Command::Check => ExperimentKind::TheoryCheck,
        }
    }
}

/// What a finished command produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Output files relative to `out_dir`, manifest excluded.
    pub files: Vec<String>,
    /// Arms that stopped with an error.
    pub failed: Vec<String>,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

/// Output directory: `--out`, then the config's `output_dir`, then
/// `$AREX_OUTPUT_ROOT/<kind>-seed<seed>`, then `runs/<kind>-seed<seed>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, out: Option<&Path>, env_root: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let leaf = format!("{}-seed{}", cfg.kind.name(), cfg.seed);
    env_root.unwrap_or(Path::new("runs")).join(leaf)
}

/// Writes `bytes` to `dir/name` through a temporary file and a rename.
pub(crate) fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

/// Collects output files of one command.
pub(crate) struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: &'a Path) -> Self {
        Self { dir, files: Vec::new() }
    }

    pub(crate) fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(self.dir, name, bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub(crate) fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }
}

/// Result of a command body before the manifest is finalized.
pub(crate) struct Body {
    pub failed: Vec<String>,
    pub timings: Vec<Timing>,
    pub summary: String,
}

/// Runs `command` with a resolved configuration. `data` overrides the
/// credit data path.
pub fn run(command: Command, mut cfg: ExperimentConfig, out_dir: &Path, data: Option<&Path>) -> Result<RunReport> {
    if cfg.kind != command.kind() {
        return Err(Error::config(
            "kind",
            format!("`{}` config given to the {} command", cfg.kind.name(), command.name()),
        ));
    }
    if let Some(d) = data {
        cfg.credit.data = Some(d.to_path_buf());
    }
    if let Some(d) = &cfg.credit.data {
        cfg.credit.data = Some(std::path::absolute(d).map_err(|e| Error::io(d, e))?);
    }
    cfg.output_dir = None;
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let snapshot = cfg.to_toml()?;
    let mut outputs = Outputs::new(out_dir);
    outputs.write(CONFIG_FILE, snapshot.as_bytes())?;
    let mut manifest = RunManifest::begin(command.name(), &snapshot, cfg.seed);
    manifest.save(out_dir)?;

    let body = match command {
        Command::Noharm => noharm::command(&cfg, &mut outputs),
        Command::SyntheticRrm => rrm::synthetic_command(&cfg, &mut outputs),
        Command::CreditRrm => rrm::credit_command(&cfg, &mut outputs),
        Command::Check => check::command(&cfg, &mut outputs),
    };
    let files = outputs.files;
    match body {
        Ok(body) => {
            manifest.finish(files.clone(), body.failed.clone(), body.timings, None);
            manifest.save(out_dir)?;
            Ok(RunReport {
                out_dir: out_dir.to_path_buf(),
                files,
                failed: body.failed,
                summary: body.summary,
            })
        }
        Err(e) => {
            manifest.finish(files, Vec::new(), Vec::new(), Some(e.to_string()));
            manifest.save(out_dir)?;
            Err(e)
        }
    }
}
