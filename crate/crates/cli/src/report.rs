use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    /// Soft anomaly: listed, never fatal.
    Warn,
    Fail,
    /// Recorded value without a pass/fail meaning.
    Info,
}

/// One checked quantity of one bundle.
#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub source: String,
    pub seed: u64,
    pub check: String,
    pub value: f64,
    /// Threshold the value was compared with, if any.
    pub limit: Option<f64>,
    pub status: Status,
    pub detail: String,
}

impl CheckRow {
    pub fn new(source: &str, seed: u64, check: &str, value: f64) -> Self {
        Self {
            source: source.to_string(),
            seed,
            check: check.to_string(),
            value,
            limit: None,
            status: Status::Info,
            detail: String::new(),
        }
    }

    /// Pass when `value ≤ limit`, otherwise `on_excess`.
    pub fn at_most(mut self, limit: f64, on_excess: Status) -> Self {
        self.limit = Some(limit);
        self.status = if self.value <= limit { Status::Pass } else { on_excess };
        self
    }

    pub fn status(mut self, s: Status) -> Self {
        self.status = s;
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

/// Writes through a sibling temporary file and a rename, so readers never
/// see half a report.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Pretty JSON of `body` with the schema version field `"v": 1` added.
pub fn versioned_json(body: impl Serialize) -> Result<String> {
    let mut value = serde_json::to_value(body)?;
    let obj = value
        .as_object_mut()
        .context("report body must serialize to an object")?;
    let mut out = serde_json::Map::new();
    out.insert("v".into(), 1.into());
    for (k, v) in std::mem::take(obj) {
        if k != "v" {
            out.insert(k, v);
        }
    }
    Ok(serde_json::to_string_pretty(&serde_json::Value::Object(out))? + "\n")
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn checks_csv(rows: &[CheckRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "seed", "check", "value", "limit", "status", "detail"])?;
    for r in rows {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Warn => "warn",
            Status::Fail => "fail",
            Status::Info => "info",
        };
        w.write_record([
            r.source.clone(),
            r.seed.to_string(),
            r.check.clone(),
            format!("{:?}", r.value),
            r.limit.map(|l| format!("{l:?}")).unwrap_or_default(),
            status.to_string(),
            r.detail.clone(),
        ])?;
    }
    Ok(w.into_inner()?)
}
