use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use arex::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    /// Some arms failed; the others completed.
    Partial,
    Failed,
}

/// Wall-clock time of one labelled step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub label: String,
    pub seconds: f64,
}

impl Timing {
    pub fn new(label: impl Into<String>, seconds: f64) -> Self {
        Self {
            label: label.into(),
            seconds,
        }
    }
}

/// Record of one run. Written when the run starts and again when it ends;
/// the only output that holds timestamps and timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The resolved configuration, byte-identical to `config.toml`.
    pub config: String,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
    pub files: Vec<String>,
    pub failed_arms: Vec<String>,
    pub error: Option<String>,
    pub timings: Vec<Timing>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn begin(command: &str, config: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: config.to_string(),
            seed,
            started: now(),
            finished: None,
            status: RunStatus::Running,
            files: Vec::new(),
            failed_arms: Vec::new(),
            error: None,
            timings: Vec::new(),
        }
    }

    pub fn finish(&mut self, files: Vec<String>, failed_arms: Vec<String>, timings: Vec<Timing>, error: Option<String>) {
        self.finished = Some(now());
        self.status = match (&error, failed_arms.is_empty()) {
            (Some(_), _) => RunStatus::Failed,
            (None, true) => RunStatus::Completed,
            (None, false) => RunStatus::Partial,
        };
        self.files = files;
        self.failed_arms = failed_arms;
        self.timings = timings;
        self.error = error;
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))?;
        crate::write_atomic(dir, crate::MANIFEST_FILE, format!("{json}\n").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}
