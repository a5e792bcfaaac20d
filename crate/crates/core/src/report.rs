//! Plain-text `name = value` reports and the provenance hash that ties
//! artifacts to the settings that produced them.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered key-value pairs; keys are unique on write.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvReport {
    pub entries: Vec<(String, String)>,
}

impl KvReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn extend(&mut self, prefix: &str, pairs: impl IntoIterator<Item = (String, String)>) {
        for (k, v) in pairs {
            let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
            self.push(key, v);
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    /// Parses `name = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut out = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                msg: format!("line {}: expected `name = value`", no + 1),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Format { path: origin.to_path_buf(), msg: format!("line {}: empty name", no + 1) });
            }
            if out.get(k).is_some() {
                return Err(Error::Format { path: origin.to_path_buf(), msg: format!("line {}: duplicate key {k:?}", no + 1) });
            }
            out.entries.push((k.to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

/// SHA-256 of the canonical rendering (keys sorted), hex encoded.
pub fn provenance_hash(entries: &[(String, String)]) -> String {
    let mut sorted: Vec<&(String, String)> = entries.iter().collect();
    sorted.sort();
    let mut h = Sha256::new();
    for (k, v) in sorted {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
