//! Run reports: a `.txt` table for people and a `.jsonl` stream for tools.
//! Both start with the command, config hash and seed.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const SUMMARY_SECTION: &str = "summary";
/// Reports whose summary rows feed the combined summary, in output order.
pub const SUMMARY_SOURCES: [&str; 3] = ["identify", "verify", "openset"];

pub struct Report {
    command: String,
    config_sha256: String,
    seed: u64,
    config: Value,
    records: Vec<Value>,
    text: Vec<String>,
}

fn text_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Report {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: cfg.sha256(),
            seed: cfg.seed,
            config: cfg.canonical_json(),
            records: Vec::new(),
            text: Vec::new(),
        }
    }

    /// Comment lines for artifacts written alongside the report.
    pub fn provenance(&self) -> Vec<String> {
        vec![format!("ecgid {}", self.command), format!("config_sha256={}", self.config_sha256), format!("seed={}", self.seed)]
    }

    pub fn provenance_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("command".into(), self.command.clone()),
            ("config_sha256".into(), self.config_sha256.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    pub fn metric(&mut self, section: &str, name: &str, value: impl Into<Value>) {
        let value = value.into();
        self.text.push(format!("{section}\t{name}\t{}", text_value(&value)));
        self.records.push(json!({"record": "metric", "section": section, "name": name, "value": value}));
    }

    /// Every scalar field of a serialisable struct as one metric.
    pub fn metrics_of(&mut self, section: &str, body: &impl Serialize) {
        if let Value::Object(map) = serde_json::to_value(body).expect("report body serialises") {
            for (k, v) in map {
                if !v.is_object() && !v.is_array() {
                    self.metric(section, &k, v);
                }
            }
        }
    }

    pub fn record(&mut self, kind: &str, body: &impl Serialize) {
        let body = serde_json::to_value(body).expect("report body serialises");
        let mut out = Map::new();
        out.insert("record".into(), kind.into());
        match body {
            Value::Object(map) => out.extend(map),
            other => {
                out.insert("value".into(), other);
            }
        }
        let out = Value::Object(out);
        self.text.push(format!("{kind}\t{out}"));
        self.records.push(out);
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let txt = dir.join(format!("{}.txt", self.command));
        let mut t = Vec::new();
        for line in self.provenance() {
            writeln!(t, "# {line}")?;
        }
        for line in &self.text {
            writeln!(t, "{line}")?;
        }
        std::fs::write(&txt, t).with_context(|| format!("cannot write {}", txt.display()))?;

        let jsonl = dir.join(format!("{}.jsonl", self.command));
        let mut j = Vec::new();
        let head = json!({
            "record": "run",
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "config": self.config,
        });
        writeln!(j, "{head}")?;
        for r in &self.records {
            writeln!(j, "{r}")?;
        }
        std::fs::write(&jsonl, j).with_context(|| format!("cannot write {}", jsonl.display()))?;
        Ok(())
    }
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let f = std::fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .map(|l| Ok(serde_json::from_str(&l?).with_context(|| format!("malformed record in {}", path.display()))?))
        .collect()
}

/// Merge the summary rows of whichever evaluation reports exist in `dir`.
pub fn rebuild_summary(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let mut summary = Report::new("summary", cfg);
    for source in SUMMARY_SOURCES {
        let path = dir.join(format!("{source}.jsonl"));
        if !path.exists() {
            continue;
        }
        let records = read_jsonl(&path)?;
        let hash = records.first().and_then(|r| r.get("config_sha256")).cloned().unwrap_or(Value::Null);
        summary.record("source", &json!({"command": source, "config_sha256": hash}));
        for r in &records {
            if r.get("record") == Some(&json!("metric")) && r.get("section") == Some(&json!(SUMMARY_SECTION)) {
                let name = r["name"].as_str().unwrap_or_default();
                summary.metric(source, name, r["value"].clone());
            }
        }
    }
    summary.write(dir)
}

/// Row name for a FAR operating point, e.g. `tar@far0.001`.
pub fn at_far(prefix: &str, far: f64) -> String {
    format!("{prefix}@far{far}")
}
