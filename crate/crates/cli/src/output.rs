//! Deterministic CSV and JSON writers. Every file carries the resolved config and hashes.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(data: &str) -> String {
    hex::encode(Sha256::digest(data.as_bytes()))
}

/// A CSV table built in memory; written with `#` comment lines ahead of the header.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn body(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn render(&self, config_json: &str) -> String {
        let body = self.body();
        let mut out = String::new();
        let _ = writeln!(out, "# config: {config_json}");
        let _ = writeln!(out, "# config_sha256: {}", sha256_hex(config_json));
        let _ = writeln!(out, "# content_sha256: {}", sha256_hex(&body));
        out.push_str(&body);
        out
    }

    pub fn write(&self, path: &Path, config_json: &str) -> anyhow::Result<()> {
        std::fs::write(path, self.render(config_json))?;
        Ok(())
    }
}

/// Number formatting shared by all outputs (shortest round-trip form).
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// CSV-safe free text.
pub fn text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

#[derive(Serialize)]
struct Report<'a, R: Serialize> {
    config: serde_json::Value,
    config_sha256: String,
    content_sha256: String,
    result: &'a R,
}

pub fn render_json<R: Serialize>(result: &R, config_json: &str) -> anyhow::Result<String> {
    let body = serde_json::to_string(result)?;
    let rep = Report {
        config: serde_json::from_str(config_json)?,
        config_sha256: sha256_hex(config_json),
        content_sha256: sha256_hex(&body),
        result,
    };
    let mut s = serde_json::to_string_pretty(&rep)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<R: Serialize>(path: &Path, result: &R, config_json: &str) -> anyhow::Result<()> {
    std::fs::write(path, render_json(result, config_json)?)?;
    Ok(())
}
