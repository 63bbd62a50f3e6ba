//! Flat `key = value` run configuration with `#` comments.
//!
//! Files are parsed into an ordered key/value list; command-line `--set`
//! overrides are applied on top; unknown keys are rejected against the
//! accepting command's key list. The manifest written next to every run is
//! this same format with all defaults resolved, so a manifest is a valid
//! config reproducing the run.

use crate::CliError;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = KvConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::validation(format!(
                    "{}:{}: expected 'key = value', got '{raw}'",
                    path.display(),
                    i + 1
                ))
            })?;
            cfg.values
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), CliError> {
        for s in sets {
            let (k, v) = s.split_once('=').ok_or_else(|| {
                CliError::validation(format!("--set needs key=value, got '{s}'"))
            })?;
            self.values
                .insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), CliError> {
        for k in self.values.keys() {
            if !known.contains(&k.as_str()) {
                return Err(CliError::validation(format!(
                    "unknown config key '{k}' (known keys: {})",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key)
            .ok_or_else(|| CliError::validation(format!("missing required config key '{key}'")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.raw(key)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.require(key)?;
        raw.parse().map_err(|_| {
            CliError::validation(format!("config key '{key}': cannot parse '{raw}'"))
        })
    }

    pub fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                CliError::validation(format!("config key '{key}': cannot parse '{raw}'"))
            }),
        }
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|p| {
                p.trim().parse().map_err(|_| {
                    CliError::validation(format!(
                        "config key '{key}': cannot parse element '{}'",
                        p.trim()
                    ))
                })
            })
            .collect()
    }

    pub fn parse_list_opt<T: std::str::FromStr>(
        &self,
        key: &str,
    ) -> Result<Option<Vec<T>>, CliError> {
        if self.raw(key).is_none() {
            return Ok(None);
        }
        self.parse_list(key).map(Some)
    }

    pub fn path(&self, key: &str, base: &Path) -> Result<PathBuf, CliError> {
        let raw = self.require(key)?;
        let p = PathBuf::from(raw);
        Ok(if p.is_absolute() { p } else { base.join(p) })
    }
}

/// Writes a manifest in config syntax with keys in the given order.
pub fn write_manifest(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let mut out = String::new();
    for (k, v) in entries {
        writeln!(out, "{k} = {v}").unwrap();
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}
