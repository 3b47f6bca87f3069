//! Run-directory writers and the manifest recorded next to every output.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn text(&mut self, name: &str, body: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.text(name, &body)
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut body = String::new();
        for row in rows {
            body.push_str(&serde_json::to_string(row)?);
            body.push('\n');
        }
        self.text(name, &body)
    }

    /// Writes `manifest.json` listing every file produced so far.
    pub fn finish(mut self, command: &str, args: &[String], cfg: &RunConfig, seed: u64, started: String) -> anyhow::Result<()> {
        let manifest = Manifest {
            tool: "rankbench",
            version: env!("CARGO_PKG_VERSION"),
            command,
            args,
            seed,
            config_sha256: cfg.digest(),
            config: cfg,
            started_at: started,
            finished_at: now(),
            outputs: std::mem::take(&mut self.written),
        };
        self.json(MANIFEST, &manifest)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    args: &'a [String],
    seed: u64,
    config_sha256: String,
    config: &'a RunConfig,
    started_at: String,
    finished_at: String,
    outputs: Vec<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
