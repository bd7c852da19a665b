//! Flat key/value experiment configuration.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A recognised configuration key.
pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
    /// `None` means the key is required.
    pub default: Option<&'static str>,
}

const fn req(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        help,
        default: None,
    }
}

const fn opt(name: &'static str, help: &'static str, default: &'static str) -> Key {
    Key {
        name,
        help,
        default: Some(default),
    }
}

pub const PROFILE_KEYS: &[Key] = &[
    req("x", "pair of real sources, e.g. quad:(0+1*sqrt(2))/1,quad:(0+1*sqrt(3))/1"),
    req("i", "first weight"),
    req("j", "second weight"),
    opt("Q", "scan limit", "1000"),
];

pub const ADVERSARY_KEYS: &[Key] = &[
    req("i", "first weight"),
    req("j", "second weight"),
    opt(
        "witness",
        "lacunary:<a1,a2,...> or liouville:growth=<g>,terms=<n>",
        "lacunary:2,5,12,24",
    ),
    opt("K", "number of blocks", "3"),
];

pub const DENSITY_KEYS: &[Key] = &[
    req("x", "pair of real sources"),
    req("i", "first weight"),
    req("j", "second weight"),
    opt("psi", "approximating function", "pow:C=1e-5,s=1"),
    opt("k", "block base (> 4)", "8"),
    opt("t0", "first level", "1"),
    opt("T", "last level", "4"),
    opt("profile_Q", "scan limit for the badness constant (auto = 2k^(T+1))", "auto"),
];

pub const CANTOR_KEYS: &[Key] = &[
    req("x", "pair of real sources"),
    req("i", "first weight"),
    req("j", "second weight"),
    opt("k", "branching parameter", "256"),
    opt("depth", "tree depth", "3"),
    opt("c", "badness constant, or from-profile:Q=<limit>", "from-profile:Q=100000"),
    opt("points", "deep points to certify", "8"),
];

pub const METRIC_KEYS: &[Key] = &[
    req("family", "interval | sup_norm | multiplicative"),
    req("psi", "approximating function"),
    opt("N", "sample count", "100000"),
    opt("Q", "cutoff", "1000"),
    req("seed", "RNG seed"),
    opt("i", "first weight (sup_norm only)", ""),
    opt("j", "second weight (sup_norm only)", ""),
    opt("tail_from", "start of the tail check (auto = Q/2)", "auto"),
];

pub fn keys_for(experiment: &str) -> Option<&'static [Key]> {
    Some(match experiment {
        "profile" => PROFILE_KEYS,
        "adversary" => ADVERSARY_KEYS,
        "density" => DENSITY_KEYS,
        "cantor" => CANTOR_KEYS,
        "metric" => METRIC_KEYS,
        _ => return None,
    })
}

/// Resolved configuration: every key of the experiment has a value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub values: BTreeMap<String, String>,
}

/// Parses a config file: JSON object, or `key = value` lines with `#` comments.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>> {
    let trimmed = text.trim_start();
    let mut map = BTreeMap::new();
    if trimmed.starts_with('{') {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("bad JSON config: {e}")))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("JSON config must be an object".into()))?;
        for (k, v) in obj {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                other => return Err(Error::Config(format!("key '{k}' has unsupported value {other}"))),
            };
            map.insert(k.clone(), s);
        }
        return Ok(map);
    }
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_file(&text)
}

impl ExperimentConfig {
    /// File values, overridden by flags, completed with defaults.
    pub fn resolve(
        experiment: &str,
        file: BTreeMap<String, String>,
        flags: BTreeMap<String, String>,
    ) -> Result<Self> {
        let keys = keys_for(experiment).ok_or_else(|| Error::Config(format!("unknown experiment '{experiment}'")))?;
        let mut values = BTreeMap::new();
        for (k, v) in file.into_iter().chain(flags) {
            if k == "experiment" {
                if v != experiment {
                    return Err(Error::Config(format!(
                        "config is for experiment '{v}', not '{experiment}'"
                    )));
                }
                continue;
            }
            if !keys.iter().any(|key| key.name == k) {
                return Err(Error::Config(format!("unknown key '{k}' for experiment '{experiment}'")));
            }
            values.insert(k, v);
        }
        for key in keys {
            if !values.contains_key(key.name) {
                match key.default {
                    Some(d) => {
                        values.insert(key.name.to_string(), d.to_string());
                    }
                    None => {
                        return Err(Error::Config(format!(
                            "missing required key '{}' ({})",
                            key.name, key.help
                        )))
                    }
                }
            }
        }
        Ok(ExperimentConfig {
            experiment: experiment.to_string(),
            values,
        })
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| Error::Config(format!("key '{key}' = '{}': {e}", self.get(key))))
    }

    /// `key=value` lines, sorted, with the experiment first.
    pub fn to_text(&self) -> String {
        let mut s = format!("experiment={}\n", self.experiment);
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("experiment".into(), self.experiment.clone().into());
        for (k, v) in &self.values {
            m.insert(k.clone(), v.clone().into());
        }
        serde_json::Value::Object(m)
    }

    /// First 12 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash12(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(digest)[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_file_and_defaults_fill() {
        let file = parse_file("# comment\nx = quad:(0+1*sqrt(2))/1,quad:(0+1*sqrt(3))/1\ni=0.5\nj=0.5\nQ=10\n").unwrap();
        let cfg = ExperimentConfig::resolve("profile", file, map(&[("Q", "20")])).unwrap();
        assert_eq!(cfg.get("Q"), "20");
        let json = parse_file(&cfg.to_json().to_string()).unwrap();
        assert_eq!(ExperimentConfig::resolve("profile", json, BTreeMap::new()).unwrap(), cfg);
        let text = parse_file(&cfg.to_text()).unwrap();
        assert_eq!(ExperimentConfig::resolve("profile", text, BTreeMap::new()).unwrap(), cfg);
        assert_eq!(cfg.hash12().len(), 12);
    }

    #[test]
    fn rejects_unknown_and_missing() {
        let e = ExperimentConfig::resolve("profile", map(&[("x", "a"), ("i", "0.5"), ("bogus", "1")]), BTreeMap::new());
        assert!(matches!(e, Err(Error::Config(m)) if m.contains("bogus")));
        let e = ExperimentConfig::resolve("profile", map(&[("x", "a"), ("i", "0.5")]), BTreeMap::new());
        assert!(matches!(e, Err(Error::Config(m)) if m.contains("'j'")));
        let e = ExperimentConfig::resolve("metric", map(&[("experiment", "profile")]), BTreeMap::new());
        assert!(e.is_err());
    }
}
