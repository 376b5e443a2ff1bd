//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Command-line flags
//! take precedence over values from the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use delaycast::design::ModelSpec;

use crate::error::UsageError;

const PATH_KEYS: [&str; 5] = ["snapshots", "frame", "triangle", "model", "out"];
const RUN_KEYS: [&str; 4] = ["anchor", "seed", "variant", "policy"];
const SPEC_KEYS: [&str; 12] = [
    "d_max",
    "window_days",
    "k_short",
    "include_ar_time",
    "include_ar_delay",
    "include_re_short",
    "include_re",
    "time_basis_dim",
    "spatial_basis_dim_per_axis",
    "penalty_order",
    "bootstrap_n",
    "interval_level",
];

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key = value", no + 1)))?;
            let key = key.trim();
            if ![&PATH_KEYS[..], &RUN_KEYS[..], &SPEC_KEYS[..]].concat().contains(&key) {
                return Err(UsageError(format!("config line {}: unknown key '{key}'", no + 1)));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(UsageError(format!("config line {}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: std::fmt::Display,
    {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| UsageError(format!("config key {key}: {e}"))))
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    /// `base` with every model key present in the file overridden.
    pub fn model_spec(&self, base: ModelSpec) -> Result<ModelSpec, UsageError> {
        let mut s = base;
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.get(stringify!($field))? {
                    s.$field = v;
                }
            )*};
        }
        set!(
            d_max,
            window_days,
            k_short,
            include_ar_time,
            include_ar_delay,
            include_re_short,
            include_re,
            time_basis_dim,
            spatial_basis_dim_per_axis,
            penalty_order,
            bootstrap_n,
            interval_level
        );
        Ok(s)
    }
}

/// First of the flag value and the config value.
pub fn pick<T: FromStr>(flag: Option<T>, config: &Config, key: &str) -> Result<Option<T>, UsageError>
where
    T::Err: std::fmt::Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => config.get(key),
    }
}

pub fn pick_path(flag: Option<PathBuf>, config: &Config, key: &str) -> Option<PathBuf> {
    flag.or_else(|| config.path(key))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let c = Config::parse("# run\nwindow_days = 28\ninclude_ar_time=true\n\nseed = 7\n").unwrap();
        let s = c.model_spec(ModelSpec::default()).unwrap();
        assert_eq!(s.window_days, 28);
        assert!(s.include_ar_time);
        assert_eq!(c.get::<u64>("seed").unwrap(), Some(7));
        assert_eq!(pick(Some(3u64), &c, "seed").unwrap(), Some(3));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::parse("colour = red").is_err());
        assert!(Config::parse("window_days 21").is_err());
        assert!(Config::parse("seed = 1\nseed = 2").is_err());
        let c = Config::parse("d_max = seven").unwrap();
        assert!(c.model_spec(ModelSpec::default()).is_err());
    }
}
