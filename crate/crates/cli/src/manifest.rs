use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one command invocation, written into its output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    /// The parsed command line.
    pub args: Value,
    /// Effective configuration after defaults, config file and flags.
    pub config: Value,
    pub seed: Option<u64>,
    /// Files written by the run, relative to the run directory when inside it.
    pub artifacts: Vec<PathBuf>,
    pub started_unix_seconds: f64,
    pub wall_clock_seconds: f64,
    /// Command-specific results.
    pub details: Value,
}

pub(crate) struct RunClock {
    started: SystemTime,
    timer: Instant,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            started: SystemTime::now(),
            timer: Instant::now(),
        }
    }
}

impl RunManifest {
    pub(crate) fn new(command: &str, args: &impl Serialize, clock: &RunClock) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: to_value(args),
            config: Value::Null,
            seed: None,
            artifacts: Vec::new(),
            started_unix_seconds: clock
                .started
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs_f64())
                .unwrap_or(0.0),
            wall_clock_seconds: 0.0,
            details: Value::Null,
        }
    }

    pub(crate) fn add_artifacts(
        &mut self,
        run_dir: &Path,
        paths: impl IntoIterator<Item = PathBuf>,
    ) {
        for p in paths {
            let rel = p.strip_prefix(run_dir).map(Path::to_path_buf).unwrap_or(p);
            self.artifacts.push(rel);
        }
    }

    /// Stamp the elapsed time and write the manifest into `run_dir`.
    pub(crate) fn finish(mut self, run_dir: &Path, clock: &RunClock) -> Result<Self> {
        self.wall_clock_seconds = clock.timer.elapsed().as_secs_f64();
        let path = run_dir.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::io(&path, e))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(&path, e))
    }
}

pub(crate) fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("plain data serialises")
}
