//! Layered run settings: command-line flags override `RISKFACTOR_*`
//! environment variables, which override a flat `key = value` config
//! file, which overrides built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use riskfactor_core::{Error, Label, Result};

pub const ENV_PREFIX: &str = "RISKFACTOR_";

/// Merged config-file and environment settings.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    /// Loads the optional config file, then lays `RISKFACTOR_*`
    /// environment variables over it.
    pub fn load(config_path: Option<&Path>) -> Result<Settings> {
        let mut map = BTreeMap::new();
        if let Some(path) = config_path {
            let text = std::fs::read_to_string(path)?;
            for (idx, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(Error::InvalidConfig(format!(
                        "{}:{}: expected key = value, got {raw:?}",
                        path.display(),
                        idx + 1
                    )));
                };
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        for (key, value) in std::env::vars() {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                if !rest.is_empty() {
                    map.insert(rest.to_lowercase(), value);
                }
            }
        }
        Ok(Settings { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }
}

/// Resolves one parameter: explicit flag, then settings, then default.
pub fn resolve<T>(flag: Option<T>, settings: &Settings, key: &str, default: T) -> Result<T>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if let Some(v) = flag {
        return Ok(v);
    }
    match settings.get(key) {
        Some(raw) => raw.parse().map_err(|e| {
            Error::InvalidConfig(format!("setting {key}={raw:?}: {e}"))
        }),
        None => Ok(default),
    }
}

/// Like [`resolve`] but with no default: absent everywhere stays `None`.
pub fn resolve_opt<T>(flag: Option<T>, settings: &Settings, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match settings.get(key) {
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("setting {key}={raw:?}: {e}"))),
        None => Ok(None),
    }
}

/// Comma-separated list of reals, e.g. `0.1,0.5,1.0`.
pub fn parse_real_list(raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad real {s:?} in list: {e}")))
        })
        .collect()
}

/// Comma-separated list of counts, e.g. `10,25,50,100`.
pub fn parse_count_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Error::InvalidParameter(format!("bad count {s:?} in list: {e}")))
        })
        .collect()
}

/// An optional label-group name: `diagnosed` or `undiagnosed`.
pub fn parse_label(raw: Option<&str>) -> Result<Option<Label>> {
    match raw {
        None => Ok(None),
        Some("diagnosed") => Ok(Some(Label::Diagnosed)),
        Some("undiagnosed") => Ok(Some(Label::Undiagnosed)),
        Some(other) => Err(Error::InvalidParameter(format!(
            "expected label `diagnosed` or `undiagnosed`, got {other:?}"
        ))),
    }
}

/// A `lower,upper` percentile pair, e.g. `50,90`.
pub fn parse_bounds(raw: &str) -> Result<(f64, f64)> {
    let values = parse_real_list(raw)?;
    if values.len() != 2 {
        return Err(Error::InvalidParameter(format!(
            "expected two comma-separated percentile bounds, got {raw:?}"
        )));
    }
    Ok((values[0], values[1]))
}
