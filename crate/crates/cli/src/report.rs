//! JSON/CSV output helpers and the per-run manifest.
//!
//! Floats are written with 17 significant digits in exponent form. JSON has
//! no encoding for NaN or infinities, so those become `null`; reports that
//! can carry them also have a boolean `finite` key.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde_json::{json, Map, Number, Value};

use crate::error::CliResult;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn num(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    Value::Number(fmt_f64(v).parse::<Number>().expect("exponent float is valid JSON"))
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("Value always serializes");
    s.push('\n');
    s
}

pub fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, to_pretty(v))?;
    Ok(())
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Record of one command invocation. Timestamps are the only fields that
/// differ between otherwise identical runs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: Map<String, Value>,
    pub seed: Option<u64>,
    pub version: &'static str,
    pub started: String,
    pub finished: Option<String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: Map::new(),
            seed: None,
            version: env!("CARGO_PKG_VERSION"),
            started: now(),
            finished: None,
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.config.insert(key.to_string(), v.into());
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        })
    }

    /// Stamps the end time and writes the manifest to `path`, or to stderr
    /// when no path is given.
    pub fn finish(mut self, path: Option<&Path>) -> CliResult<()> {
        self.finished = Some(now());
        match path {
            Some(p) => write_json(p, &self.to_json()),
            None => {
                let mut err = std::io::stderr().lock();
                err.write_all(b"manifest: ")?;
                err.write_all(serde_json::to_string(&self.to_json()).expect("serializable").as_bytes())?;
                err.write_all(b"\n")?;
                Ok(())
            }
        }
    }
}
