//! Run manifest: configuration echo, code version and wall times.

use std::path::Path;
use std::time::Duration;

use crate::config::{Experiment, RunConfig};
use crate::CliError;
use wfr_core::WfrError;

pub struct Manifest {
    experiment: &'static str,
    config: serde_json::Value,
    step_wall_ms: Vec<f64>,
}

impl Manifest {
    pub fn new(exp: Experiment, cfg: &RunConfig) -> Manifest {
        Manifest {
            experiment: exp.name(),
            config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
            step_wall_ms: Vec::new(),
        }
    }

    pub fn push_step_ms(&mut self, ms: f64) {
        self.step_wall_ms.push(ms);
    }

    pub fn finish(&mut self, total: Duration, path: &Path) -> Result<(), CliError> {
        let doc = serde_json::json!({
            "experiment": self.experiment,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config,
            "step_wall_ms": self.step_wall_ms,
            "total_wall_ms": total.as_secs_f64() * 1e3,
        });
        let text = serde_json::to_string_pretty(&doc)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(path, text).map_err(WfrError::Io)?;
        Ok(())
    }
}
