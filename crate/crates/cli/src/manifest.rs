use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    pub started_at: String,
    pub wall_clock_s: f64,
    pub summary: BTreeMap<String, serde_json::Value>,
    #[serde(skip)]
    start: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str, config: Option<&Path>, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            wall_clock_s: 0.0,
            summary: BTreeMap::new(),
            start: Some(Instant::now()),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.summary.insert(key.to_string(), v);
    }

    pub fn write(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.wall_clock_s = self.start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
