//! Flat `key = value` config files. Values from the command line win over
//! the file; the file wins over built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config file {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            // Section headers are tolerated and ignored; keys are global.
            if line.starts_with('[') && line.ends_with(']') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", i + 1))?;
            let key = key.trim().to_string();
            let mut value = value.trim();
            if value.len() >= 2
                && ((value.starts_with('"') && value.ends_with('"'))
                    || (value.starts_with('\'') && value.ends_with('\'')))
            {
                value = &value[1..value.len() - 1];
            }
            values.insert(key, value.to_string());
        }
        Ok(FileConfig { values })
    }

    /// Flag value, else file value, else default.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow!("config key {key:?}: {e}")),
            None => Ok(default),
        }
    }

    /// Flag value, else file value, else `None`.
    pub fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key {key:?}: {e}")),
            None => Ok(None),
        }
    }

    pub fn resolve_flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        match self.values.get(key) {
            Some(raw) => raw
                .parse::<bool>()
                .map_err(|e| anyhow!("config key {key:?}: {e}")),
            None => Ok(false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_sections_and_quotes() {
        let cfg = FileConfig::parse(
            "# comment\n[train]\nseed = 7\nrate = 5.0\nname = \"hello\"\nspaces = true\n",
        )
        .unwrap();
        assert_eq!(cfg.resolve(None::<u64>, "seed", 0).unwrap(), 7);
        assert_eq!(cfg.resolve(None::<f64>, "rate", 1.0).unwrap(), 5.0);
        assert_eq!(cfg.resolve(None::<String>, "name", "x".into()).unwrap(), "hello");
        assert!(cfg.resolve_flag(false, "spaces").unwrap());
    }

    #[test]
    fn flags_win_over_file() {
        let cfg = FileConfig::parse("seed = 7\n").unwrap();
        assert_eq!(cfg.resolve(Some(3u64), "seed", 0).unwrap(), 3);
    }

    #[test]
    fn missing_key_falls_back_to_default() {
        let cfg = FileConfig::parse("").unwrap();
        assert_eq!(cfg.resolve(None::<u64>, "seed", 42).unwrap(), 42);
    }

    #[test]
    fn malformed_line_is_an_error() {
        assert!(FileConfig::parse("not a kv line\n").is_err());
    }
}
