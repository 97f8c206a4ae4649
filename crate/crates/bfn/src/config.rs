//! Flat key-value run configuration.
//!
//! The format is one `[section]` per command with `key = value` lines and
//! `#` comments. Command-line flags override file values; the resolved
//! key-value set is hashed (FNV-1a over the sorted `section.key=value`
//! lines) and the hash is recorded in the run metadata so outputs can be
//! replayed exactly.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            if current.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: key outside any [section]",
                    lineno + 1
                )));
            }
            sections
                .get_mut(&current)
                .unwrap()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(RunConfig { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, section: &str, key: &str, value: String) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value);
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|s| s.as_str())
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse {raw:?}"))),
        }
    }

    pub fn get_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get_parsed(section, key)?.unwrap_or(default))
    }

    /// Gain list: either a comma list (`0,0.5,1`) or a range `start:end:step`
    /// (inclusive end, within half a step).
    pub fn gains(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        let raw = match self.get(section, key) {
            None => return Ok(default.to_vec()),
            Some(r) => r,
        };
        let bad = |r: &str| Error::Config(format!("[{section}] {key}: cannot parse gains {r:?}"));
        if raw.contains(':') {
            let parts: Vec<&str> = raw.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(raw));
            }
            let start: f64 = parts[0].trim().parse().map_err(|_| bad(raw))?;
            let end: f64 = parts[1].trim().parse().map_err(|_| bad(raw))?;
            let step: f64 = parts[2].trim().parse().map_err(|_| bad(raw))?;
            if step <= 0.0 || step.is_nan() || end < start {
                return Err(bad(raw));
            }
            let mut out = Vec::new();
            let mut k = start;
            while k <= end + step / 2.0 {
                out.push(k);
                k += step;
            }
            Ok(out)
        } else {
            raw.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| bad(raw)))
                .collect()
        }
    }

    /// FNV-1a hash over the sorted resolved entries, as fixed-width hex.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (section, entries) in &self.sections {
            for (k, v) in entries {
                feed(section.as_bytes());
                feed(b".");
                feed(k.as_bytes());
                feed(b"=");
                feed(v.as_bytes());
                feed(b"\n");
            }
        }
        format!("{h:016x}")
    }
}
