//! Canonical JSON reports: keys sorted at every level, floats printed in
//! shortest round-trip form, so equal reports are equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bounds::PacBound;
use crate::certificate::MiCertificate;
use crate::error::{Error, Result};
use crate::noise::NoiseSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Echo of the effective configuration, sufficient to re-run.
    pub config: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<MiCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pac_bounds: Vec<PacBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Value>,
    /// Command-specific results.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Value>,
}

impl Report {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config,
            certificate: None,
            noise: None,
            pac_bounds: Vec::new(),
            baselines: None,
            details: Value::Null,
            timing: None,
        }
    }

    /// Re-checks the invariants of every embedded bound and certificate.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::input(format!("unsupported report schema {}", self.schema_version)));
        }
        self.pac_bounds.iter().try_for_each(PacBound::validate)?;
        if let Some(c) = &self.certificate {
            c.validate()?;
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, sort_keys(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn canonical_json(value: &impl Serialize) -> Result<String> {
    let v = sort_keys(serde_json::to_value(value)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    report.validate()?;
    let text = canonical_json(report)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: Report = serde_json::from_str(&text)?;
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::PriorRate;
    use nalgebra::DMatrix;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_and_output_is_stable() {
        let text = canonical_json(&json!({"b": 1, "a": {"z": 0.1, "y": [{"q": 1, "p": 2}]}})).unwrap();
        let a = text.find("\"a\"").unwrap();
        let b = text.find("\"b\"").unwrap();
        assert!(a < b);
        assert!(text.find("\"p\"").unwrap() < text.find("\"q\"").unwrap());
        assert_eq!(text, canonical_json(&json!({"a": {"y": [{"p": 2, "q": 1}], "z": 0.1}, "b": 1})).unwrap());
    }

    #[test]
    fn report_round_trips_noise_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = Report::new("bound", json!({"v": 1.0}));
        let t: f64 = 0.7;
        let u = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        r.noise = Some(NoiseSpec::anisotropic(&u, vec![1.0 / 3.0, 2.0f64.sqrt()]).unwrap());
        r.pac_bounds.push(PacBound::new("identification", PriorRate::uniform(100).unwrap(), 1.0).unwrap());
        emit_report(&r, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, r);
        let first = std::fs::read(&path).unwrap();
        emit_report(&back, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }
}
