//! Layered configuration: command-line flag > `FTCT_*` environment variable >
//! config file > built-in default.
//!
//! The config file is line-oriented `key = value` with `#` comments. Keys are
//! the long flag names with `-` replaced by `_`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

use crate::api_client::{BoardId, EndpointSet, RequestBudget};
use crate::collector::{CollectorConfig, SchedulingMode};

pub const ENV_PREFIX: &str = "FTCT_";

pub const KEYS: &[&str] = &[
    "data_dir",
    "boards",
    "exclude_boards",
    "min_interval_ms",
    "burst",
    "cycle_pause_s",
    "mode",
    "refetch_unchanged",
    "strict",
    "user_agent",
    "api_host",
    "media_host",
    "scheme",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("--boards and --exclude-boards cannot be combined")]
    IncludeAndExclude,
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

/// One layer of raw, unvalidated settings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: HashMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey(key.into()));
        }
        self.values.insert(key.into(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parses `key = value` lines.
    pub fn parse_file(text: &str) -> Result<Self, ConfigError> {
        let mut s = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(pos) => &line[..pos],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().replace('-', "_");
            let value = value.trim().trim_matches('"');
            s.set(&key, value).map_err(|_| ConfigError::Syntax {
                line: i + 1,
                message: format!("unknown key {key:?}"),
            })?;
        }
        Ok(s)
    }

    /// Picks up `FTCT_<KEY>` variables; everything else is ignored.
    pub fn from_env<I, K, V>(vars: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let mut s = Self::new();
        for (k, v) in vars {
            if let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) {
                let key = rest.to_ascii_lowercase();
                if KEYS.contains(&key.as_str()) {
                    s.values.insert(key, v.into());
                }
            }
        }
        s
    }

    /// Values in `self` win over values in `lower`.
    pub fn over(mut self, lower: &Settings) -> Self {
        for (k, v) in &lower.values {
            self.values.entry(k.clone()).or_insert_with(|| v.clone());
        }
        self
    }

    pub fn to_config(&self) -> Result<CollectorConfig, ConfigError> {
        let mut config = CollectorConfig::default();
        if let Some(v) = self.get("data_dir") {
            if v.is_empty() {
                return Err(invalid("data_dir", "empty path"));
            }
            config.storage_root = PathBuf::from(v);
        }
        if let Some(v) = self.get("boards") {
            config.include_boards = parse_board_list("boards", v)?;
        }
        if let Some(v) = self.get("exclude_boards") {
            config.exclude_boards = parse_board_list("exclude_boards", v)?;
        }
        if !config.include_boards.is_empty() && !config.exclude_boards.is_empty() {
            return Err(ConfigError::IncludeAndExclude);
        }
        let interval = match self.get("min_interval_ms") {
            Some(v) => Duration::from_millis(parse_u64("min_interval_ms", v)?),
            None => config.budget.min_interval(),
        };
        let burst = match self.get("burst") {
            Some(v) => parse_u64("burst", v)? as usize,
            None => config.budget.burst(),
        };
        config.budget = RequestBudget::new(interval, burst)
            .map_err(|e| invalid("min_interval_ms/burst", e.to_string()))?;
        if let Some(v) = self.get("cycle_pause_s") {
            config.cycle_pause = parse_seconds("cycle_pause_s", v)?;
        }
        if let Some(v) = self.get("mode") {
            config.scheduling_mode = parse_mode(v)?;
        }
        if let Some(v) = self.get("refetch_unchanged") {
            config.refetch_unchanged = parse_bool("refetch_unchanged", v)?;
        }
        if let Some(v) = self.get("strict") {
            config.strict = parse_bool("strict", v)?;
        }
        if let Some(v) = self.get("user_agent") {
            config.user_agent = v.to_owned();
        }
        let defaults = EndpointSet::default();
        config.endpoints = EndpointSet::new(
            self.get("scheme").unwrap_or(&defaults.scheme),
            self.get("api_host").unwrap_or(&defaults.api_host),
            self.get("media_host").unwrap_or(&defaults.media_host),
        )
        .map_err(|e| invalid("endpoints", e.to_string()))?;
        Ok(config)
    }
}

pub fn parse_board_list(key: &str, v: &str) -> Result<Vec<BoardId>, ConfigError> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let board =
            BoardId::new(part.trim_matches('/')).map_err(|e| invalid(key, e.to_string()))?;
        if !out.contains(&board) {
            out.push(board);
        }
    }
    Ok(out)
}

fn parse_u64(key: &str, v: &str) -> Result<u64, ConfigError> {
    v.trim()
        .parse::<u64>()
        .map_err(|_| invalid(key, format!("{v:?} is not a non-negative integer")))
}

fn parse_seconds(key: &str, v: &str) -> Result<Duration, ConfigError> {
    let secs: f64 = v
        .trim()
        .parse()
        .map_err(|_| invalid(key, format!("{v:?} is not a number of seconds")))?;
    Duration::try_from_secs_f64(secs).map_err(|_| invalid(key, format!("{v:?} is out of range")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(invalid(key, format!("{v:?} is not a boolean"))),
    }
}

pub fn parse_mode(v: &str) -> Result<SchedulingMode, ConfigError> {
    match v.trim() {
        "jit" | "just-in-time" => Ok(SchedulingMode::CatalogJustInTime),
        "upfront" => Ok(SchedulingMode::CatalogsUpfront),
        other => Err(invalid(
            "mode",
            format!("{other:?} (expected upfront or jit)"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Settings::new().to_config().unwrap();
        assert_eq!(c.budget.min_interval(), Duration::from_millis(1100));
        assert_eq!(c.cycle_pause, Duration::from_secs(60));
        assert_eq!(c.scheduling_mode, SchedulingMode::CatalogJustInTime);
        assert!(!c.refetch_unchanged);
        assert_eq!(c.endpoints.api_host, "a.4cdn.org");
        assert_eq!(c.storage_root, PathBuf::from("data"));
    }

    #[test]
    fn file_syntax() {
        let s = Settings::parse_file(
            "# comment\n\ndata-dir = /srv/archive  # trailing\nboards = pol, b\nmode = upfront\n",
        )
        .unwrap();
        let c = s.to_config().unwrap();
        assert_eq!(c.storage_root, PathBuf::from("/srv/archive"));
        assert_eq!(
            c.include_boards,
            vec![BoardId::new("pol").unwrap(), BoardId::new("b").unwrap()]
        );
        assert_eq!(c.scheduling_mode, SchedulingMode::CatalogsUpfront);
        assert!(matches!(
            Settings::parse_file("boards pol"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            Settings::parse_file("\ncolour = red"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
    }

    #[test]
    fn env_vars() {
        let s = Settings::from_env([
            ("FTCT_DATA_DIR", "/env"),
            ("FTCT_UNKNOWN", "x"),
            ("HOME", "/root"),
        ]);
        assert_eq!(s.get("data_dir"), Some("/env"));
        assert_eq!(s.values.len(), 1);
    }

    #[test]
    fn precedence_is_flag_env_file_default() {
        for key in ["min_interval_ms", "cycle_pause_s"] {
            let layer = |v: &str| {
                let mut s = Settings::new();
                s.set(key, v).unwrap();
                s
            };
            let (flag, env, file) = (layer("7"), layer("8"), layer("9"));
            let pick = |s: Settings| {
                let c = s.to_config().unwrap();
                if key == "min_interval_ms" {
                    c.budget.min_interval().as_millis() as u64
                } else {
                    c.cycle_pause.as_secs()
                }
            };
            assert_eq!(pick(flag.clone().over(&env.clone().over(&file))), 7);
            assert_eq!(pick(Settings::new().over(&env.clone().over(&file))), 8);
            assert_eq!(pick(Settings::new().over(&Settings::new().over(&file))), 9);
        }
    }

    #[test]
    fn rejects_bad_values() {
        let mut s = Settings::new();
        s.set("boards", "a").unwrap();
        s.set("exclude_boards", "b").unwrap();
        assert_eq!(s.to_config(), Err(ConfigError::IncludeAndExclude));

        for (k, v) in [
            ("min_interval_ms", "fast"),
            ("min_interval_ms", "0"),
            ("cycle_pause_s", "-1"),
            ("mode", "sideways"),
            ("refetch_unchanged", "maybe"),
            ("boards", "Pol"),
            ("api_host", "bad host"),
        ] {
            let mut s = Settings::new();
            s.set(k, v).unwrap();
            assert!(s.to_config().is_err(), "{k}={v}");
        }
        assert!(Settings::new().set("nope", "1").is_err());
    }
}
