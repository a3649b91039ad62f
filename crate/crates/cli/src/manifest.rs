//! Per-run record of configuration, input digests and stage timings.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<String>,
    pub seconds: f64,
    /// Products skipped by this stage.
    pub skipped: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: BTreeMap<String, String>,
    /// SHA-256 of every file read, keyed by path.
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: cfg
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            inputs: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn begin(&self, name: &str) -> StageTimer {
        StageTimer {
            record: StageRecord {
                name: name.into(),
                outputs: Vec::new(),
                seconds: 0.0,
                skipped: Vec::new(),
                warnings: Vec::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn finish(&mut self, timer: StageTimer) {
        let mut record = timer.record;
        record.seconds = timer.started.elapsed().as_secs_f64();
        self.stages.push(record);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::io(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}

pub struct StageTimer {
    pub record: StageRecord,
    started: Instant,
}

impl StageTimer {
    pub fn output(&mut self, path: &Path) {
        self.record.outputs.push(path.display().to_string());
    }

    pub fn warn(&mut self, message: String) {
        log::warn!("{}: {message}", self.record.name);
        self.record.warnings.push(message);
    }

    pub fn skip(&mut self, product_id: &str, reason: String) {
        self.warn(format!("skipping {product_id}: {reason}"));
        self.record.skipped.push(product_id.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn stages_are_recorded() {
        let mut m = RunManifest::new("forecast", &RunConfig::default());
        let mut t = m.begin("forecast");
        t.skip("P009", "too short".into());
        t.output(Path::new("out/forecast.csv"));
        m.finish(t);
        assert_eq!(m.stages.len(), 1);
        assert_eq!(m.stages[0].skipped, vec!["P009"]);
        assert_eq!(m.config["seed"], "42");
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"outputs\":[\"out/forecast.csv\"]"));
    }
}
