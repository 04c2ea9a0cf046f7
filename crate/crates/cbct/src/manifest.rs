use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::formats::write_json;

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
        }
    }

    /// Default location: `<first file output>.run.json`, or
    /// `<command>.run.json` in the working directory when every output is
    /// a stream.
    pub fn default_path(&self) -> PathBuf {
        match self.outputs.iter().find(|o| o.as_str() != "-") {
            Some(out) => PathBuf::from(format!("{out}.run.json")),
            None => PathBuf::from(format!("{}.run.json", self.command)),
        }
    }

    pub fn finish(mut self, elapsed: Duration, path: Option<&Path>) -> CliResult<PathBuf> {
        self.wall_time_s = elapsed.as_secs_f64();
        let path = path.map(Path::to_path_buf).unwrap_or_else(|| self.default_path());
        write_json(&path, &self)?;
        Ok(path)
    }
}
