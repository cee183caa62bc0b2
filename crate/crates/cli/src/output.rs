//! Output directory handling. Every file starts with the same provenance:
//! toolkit version, hash of the effective config, master seed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format};

pub const OUT_ENV: &str = "GE_REMOTE_OUT";
pub const DEFAULT_OUT: &str = "ge-remote-out";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Meta {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    data: &'a T,
}

/// SHA-256 of the canonical config with the output directory removed, so
/// the same experiment hashes the same wherever it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.output.dir = None;
    hex::encode(Sha256::digest(c.to_toml().as_bytes()))
}

/// Flag or config value, then `$GE_REMOTE_OUT`, then `ge-remote-out`.
pub fn base_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .dir
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub struct OutputDir {
    pub path: PathBuf,
    pub meta: Meta,
    json: bool,
    csv: bool,
    written: Vec<PathBuf>,
}

impl OutputDir {
    /// Creates `path` and echoes the effective config into it.
    pub fn create(path: &Path, cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        let meta = Meta {
            toolkit: "ge-remote",
            version: VERSION,
            config_sha256: config_hash(cfg),
            seed: cfg.simulation.seed,
        };
        let mut out = Self { path: path.to_path_buf(), meta, json: cfg.wants(Format::Json), csv: cfg.wants(Format::Csv), written: Vec::new() };
        let mut echo = out.comment_block("# ");
        echo.push_str(&cfg.to_toml());
        out.write_raw("config.toml", echo.as_bytes())?;
        Ok(out)
    }

    fn comment_block(&self, prefix: &str) -> String {
        format!(
            "{prefix}{} {}\n{prefix}config_sha256 {}\n{prefix}seed {}\n",
            self.meta.toolkit, self.meta.version, self.meta.config_sha256, self.meta.seed
        )
    }

    fn write_raw(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let p = self.path.join(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p);
        Ok(())
    }

    /// `{"meta": ..., "data": ...}`, pretty-printed, trailing newline.
    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> anyhow::Result<()> {
        if !self.json {
            return Ok(());
        }
        let mut s = serde_json::to_string_pretty(&Envelope { meta: &self.meta, data })?;
        s.push('\n');
        self.write_raw(name, s.as_bytes())
    }

    /// Header comment lines, then whatever `body` writes (header row first).
    pub fn csv<F>(&mut self, name: &str, body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        if !self.csv {
            return Ok(());
        }
        let mut buf = self.comment_block("# ").into_bytes();
        body(&mut buf)?;
        self.write_raw(name, &buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Strips the envelope if present.
pub fn read_data(path: &Path) -> anyhow::Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(d) = v.get_mut("data") {
        return Ok(d.take());
    }
    Ok(v)
}
