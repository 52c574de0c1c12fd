use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, Serialize)]
struct Timing {
    stage: String,
    seconds: f64,
}

/// The configuration of a command invocation plus its log: stage timings
/// and the files it wrote.
pub struct RunContext {
    pub cfg: PipelineConfig,
    pub config_hash: String,
    command: &'static str,
    started: u64,
    clock: Instant,
    timings: Vec<Timing>,
    outputs: Vec<PathBuf>,
}

impl RunContext {
    pub fn start(cfg: PipelineConfig, command: &'static str) -> anyhow::Result<Self> {
        let config_hash = cfg.hash();
        std::fs::create_dir_all(cfg.out_dir.join("logs"))?;
        std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())?;
        Ok(Self {
            cfg,
            config_hash,
            command,
            started: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
            timings: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    pub fn lap(&mut self, stage: &str) {
        self.timings.push(Timing {
            stage: stage.to_owned(),
            seconds: self.clock.elapsed().as_secs_f64(),
        });
        self.clock = Instant::now();
    }

    pub fn wrote(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn log_path(&self, suffix: &str) -> PathBuf {
        self.path("logs")
            .join(format!("{}{suffix}.json", self.command))
    }

    pub fn finish(&self) -> anyhow::Result<()> {
        let record = json!({
            "format_version": pdscreen_core::io::FORMAT_VERSION,
            "command": self.command,
            "status": "ok",
            "seed": self.cfg.seed,
            "config_hash": self.config_hash,
            "started_unix": self.started,
            "timings": self.timings,
            "outputs": self.outputs,
        });
        std::fs::write(
            self.log_path(""),
            serde_json::to_string_pretty(&record)? + "\n",
        )?;
        Ok(())
    }

    pub fn write_error(&self, record: &serde_json::Value) {
        let _ = std::fs::write(
            self.log_path(".error"),
            serde_json::to_string_pretty(record).unwrap_or_default() + "\n",
        );
    }
}

pub fn error_record(command: &str, err: &anyhow::Error, is_config: bool) -> serde_json::Value {
    let mut record = json!({
        "status": "error",
        "command": command,
        "kind": if is_config { "config" } else { "runtime" },
        "message": format!("{err:#}"),
    });
    if let Some(c) = err.downcast_ref::<ConfigError>() {
        record["section"] = json!(c.section);
        record["key"] = json!(c.key);
    }
    record
}
