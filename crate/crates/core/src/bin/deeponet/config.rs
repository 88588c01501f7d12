//! Flat dotted-key JSON configuration with flag overrides.
//!
//! A config file is a single JSON object whose keys are dotted paths
//! (`"train.lr": 0.001`). Unknown keys are rejected up front; every value
//! actually used (default, file or flag) lands in the resolved echo that
//! each subcommand writes next to its outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

pub struct ConfigMap {
    values: BTreeMap<String, Value>,
    allowed: BTreeSet<&'static str>,
    resolved: BTreeMap<String, Value>,
}

impl ConfigMap {
    pub fn load(path: Option<&Path>, allowed: &[&'static str]) -> Result<Self> {
        let allowed: BTreeSet<&'static str> = allowed.iter().copied().collect();
        let mut values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?;
            let obj = parsed
                .as_object()
                .ok_or_else(|| anyhow!("config must be a JSON object of dotted keys"))?;
            for (k, v) in obj {
                if !allowed.contains(k.as_str()) {
                    bail!(
                        "unknown config key {k:?} (known keys: {})",
                        allowed.iter().copied().collect::<Vec<_>>().join(", ")
                    );
                }
                values.insert(k.clone(), v.clone());
            }
        }
        Ok(Self { values, allowed, resolved: BTreeMap::new() })
    }

    /// Applies `--set key=value` flag overrides, which win over file
    /// values. Values parse as JSON scalars, falling back to strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got {item:?}"))?;
            if !self.allowed.contains(key) {
                bail!(
                    "unknown config key {key:?} (known keys: {})",
                    self.allowed.iter().copied().collect::<Vec<_>>().join(", ")
                );
            }
            let value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            self.values.insert(key.to_string(), value);
        }
        Ok(())
    }

    pub fn f64(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = match self.values.get(key) {
            None => default,
            Some(v) => v.as_f64().ok_or_else(|| anyhow!("config key {key:?} must be a number"))?,
        };
        self.resolved.insert(key.to_string(), serde_json::json!(v));
        Ok(v)
    }

    pub fn opt_f64(&mut self, key: &'static str) -> Result<Option<f64>> {
        let v = match self.values.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => {
                Some(v.as_f64().ok_or_else(|| anyhow!("config key {key:?} must be a number"))?)
            }
        };
        self.resolved.insert(key.to_string(), serde_json::json!(v));
        Ok(v)
    }

    pub fn usize(&mut self, key: &'static str, default: usize) -> Result<usize> {
        let v = match self.values.get(key) {
            None => default,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| anyhow!("config key {key:?} must be a non-negative integer"))?
                as usize,
        };
        self.resolved.insert(key.to_string(), serde_json::json!(v));
        Ok(v)
    }

    pub fn string(&mut self, key: &'static str, default: &str) -> Result<String> {
        let v = match self.values.get(key) {
            None => default.to_string(),
            Some(v) => v
                .as_str()
                .ok_or_else(|| anyhow!("config key {key:?} must be a string"))?
                .to_string(),
        };
        self.resolved.insert(key.to_string(), serde_json::json!(v));
        Ok(v)
    }

    /// Adds a non-config fact (input path, seed) to the echo.
    pub fn note(&mut self, key: &str, value: Value) {
        self.resolved.insert(key.to_string(), value);
    }

    /// Resolved configuration as pretty JSON, keys sorted.
    pub fn echo_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(&self.resolved).expect("serializable");
        out.push('\n');
        out
    }
}
