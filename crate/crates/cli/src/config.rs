//! Layered configuration: flags > environment > config file > defaults.
//!
//! Every resolved value remembers the layer it came from. Config files are
//! `key = value` lines with `#` comments; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const ENV_PREFIX: &str = "PRAGMABENCH_";
pub const CONFIG_FILE_ENV: &str = "PRAGMABENCH_CONFIG";

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "strategy",
    "provider",
    "model",
    "mock",
    "prompt_set",
    "limit",
    "seed",
    "concurrency",
    "temperature",
    "max_tokens_stage1",
    "max_tokens_stage2",
    "unparseable_policy",
    "repeat",
    "cache_dir",
    "out",
    "retry_max_attempts",
    "retry_base_backoff_ms",
    "max_in_flight",
    "requests_per_minute",
];

pub const DEFAULTS: &[(&str, &str)] = &[
    ("data_dir", "data"),
    ("seed", "0"),
    ("concurrency", "1"),
    ("temperature", "0.0"),
    ("max_tokens_stage1", "1024"),
    ("max_tokens_stage2", "512"),
    ("unparseable_policy", "count-as-wrong"),
    ("cache_dir", ".pragmabench/cache"),
    ("out", "runs"),
    ("retry_max_attempts", "4"),
    ("retry_base_backoff_ms", "500"),
    ("max_in_flight", "8"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config file line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config file line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("config file line {line}: `{key}` set twice")]
    Duplicate { line: usize, key: String },
    #[error("missing required setting `{0}` (flag --{flag}, env {env})", flag = .0.replace('_', "-"), env = env_name(.0))]
    Missing(String),
    #[error("invalid value `{value}` for `{key}` (from {layer}): {reason}")]
    Invalid {
        key: String,
        value: String,
        layer: Source,
        reason: String,
    },
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())
}

pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut values = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        let value = value.trim().trim_matches('"').to_string();
        if values.insert(key.to_string(), value).is_some() {
            return Err(ConfigError::Duplicate {
                line: line_no,
                key: key.to_string(),
            });
        }
    }
    Ok(values)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolvedConfig {
    values: BTreeMap<String, (String, Source)>,
}

impl ResolvedConfig {
    /// Merges the layers. `env` looks up an environment variable by name.
    pub fn resolve(
        flags: &BTreeMap<String, String>,
        env: impl Fn(&str) -> Option<String>,
        file: &BTreeMap<String, String>,
    ) -> Self {
        let mut values = BTreeMap::new();
        for (key, value) in DEFAULTS {
            values.insert(key.to_string(), (value.to_string(), Source::Default));
        }
        for (key, value) in file {
            values.insert(key.clone(), (value.clone(), Source::File));
        }
        for key in KEYS {
            if let Some(value) = env(&env_name(key)).filter(|v| !v.is_empty()) {
                values.insert(key.to_string(), (value, Source::Env));
            }
        }
        for (key, value) in flags {
            values.insert(key.clone(), (value.clone(), Source::Flag));
        }
        ResolvedConfig { values }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn source(&self, key: &str) -> Option<Source> {
        self.values.get(key).map(|(_, s)| *s)
    }

    pub fn set_default(&mut self, key: &str, value: &str) {
        self.values
            .entry(key.to_string())
            .or_insert_with(|| (value.to_string(), Source::Default));
    }

    pub fn required(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    pub fn parse<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some((value, source)) => value.parse().map(Some).map_err(|e: T::Err| ConfigError::Invalid {
                key: key.to_string(),
                value: value.clone(),
                layer: *source,
                reason: e.to_string(),
            }),
        }
    }

    pub fn parse_required<T>(&self, key: &str) -> Result<T, ConfigError>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.parse(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// `key = value  # source` lines, for recording next to a run.
    pub fn describe(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, s))| format!("{k} = {v}  # {s}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn precedence_matrix() {
        // For every subset of layers that set `seed`, the highest layer wins.
        for mask in 0u8..8 {
            let flag = mask & 1 != 0;
            let env = mask & 2 != 0;
            let file = mask & 4 != 0;
            let flags = if flag { map(&[("seed", "1")]) } else { map(&[]) };
            let file_values = if file { map(&[("seed", "3")]) } else { map(&[]) };
            let cfg = ResolvedConfig::resolve(
                &flags,
                |name| (env && name == "PRAGMABENCH_SEED").then(|| "2".to_string()),
                &file_values,
            );
            let (expected, source) = if flag {
                ("1", Source::Flag)
            } else if env {
                ("2", Source::Env)
            } else if file {
                ("3", Source::File)
            } else {
                ("0", Source::Default)
            };
            assert_eq!(cfg.raw("seed"), Some(expected), "mask {mask:03b}");
            assert_eq!(cfg.source("seed"), Some(source), "mask {mask:03b}");
        }
    }

    #[test]
    fn file_parsing() {
        let parsed = parse_config_file("# comment\nmodel = gpt-4o\n\nlimit=20\n").unwrap();
        assert_eq!(parsed, map(&[("model", "gpt-4o"), ("limit", "20")]));
        assert_eq!(
            parse_config_file("colour = red").unwrap_err(),
            ConfigError::UnknownKey {
                line: 1,
                key: "colour".into()
            }
        );
        assert_eq!(parse_config_file("model").unwrap_err(), ConfigError::Syntax { line: 1 });
        assert!(matches!(
            parse_config_file("seed=1\nseed=2").unwrap_err(),
            ConfigError::Duplicate { line: 2, .. }
        ));
    }

    #[test]
    fn typed_access() {
        let cfg = ResolvedConfig::resolve(&map(&[("limit", "abc")]), |_| None, &map(&[]));
        assert!(matches!(cfg.parse::<usize>("limit"), Err(ConfigError::Invalid { layer: Source::Flag, .. })));
        assert_eq!(cfg.parse_required::<u64>("seed").unwrap(), 0);
        assert!(matches!(cfg.required("strategy"), Err(ConfigError::Missing(_))));
    }
}
