//! Output bookkeeping and the run manifest.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Every file a command writes goes through here so the manifest can list it.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs { dir: dir.to_path_buf(), files: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path for `name` in the output directory, recorded as an output.
    pub fn file(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.record(p.clone());
        p
    }

    pub fn record(&mut self, p: PathBuf) {
        if !self.files.contains(&p) {
            self.files.push(p);
        }
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct Manifest {
    command: &'static str,
    config: ExperimentConfig,
    planted_u: bool,
    started: SystemTime,
    clock: Instant,
}

impl Manifest {
    pub fn start(command: &'static str, config: &ExperimentConfig, planted_u: bool) -> Self {
        Manifest { command, config: config.clone(), planted_u, started: SystemTime::now(), clock: Instant::now() }
    }

    /// Writes `<command>.manifest.json` naming every recorded output that exists.
    pub fn finish(self, out: &mut Outputs) -> Result<()> {
        let path = out.dir().join(format!("{}.manifest.json", self.command));
        let files: Vec<String> = out.files.iter().filter(|p| p.exists()).map(|p| p.display().to_string()).collect();
        let m = json!({
            "command": self.command,
            "version": format!("cmra-cli v{}", env!("CARGO_PKG_VERSION")),
            "config": self.config,
            "planted_u": self.planted_u,
            "seeds": { "seed": self.config.seed, "streams": ["signal", "observations", "u"] },
            "timing": {
                "started_unix": self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
                "elapsed_seconds": self.clock.elapsed().as_secs_f64(),
            },
            "outputs": files,
            "environment": {
                "threads": rayon::current_num_threads(),
                "mem_cap": self.config.mem_cap,
                "os": std::env::consts::OS,
                "arch": std::env::consts::ARCH,
            },
        });
        write_json(&path, &m)
    }
}
