//! Flat key-value run configuration: the file format is `key = value` lines
//! with `#` comments, diffable and hand-editable. Every key that a command
//! understands is registered here; anything else is rejected by name.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use shelab_core::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct Config {
    values: BTreeMap<String, String>,
    touched: BTreeSet<String>,
    /// Effective values after defaults, echoed into the manifest.
    echo: BTreeMap<String, String>,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_content(&text)
    }

    pub fn from_str_content(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {} is not `key = value`: {raw:?}",
                    lineno + 1
                ))
            })?;
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self {
            values,
            touched: BTreeSet::new(),
            echo: BTreeMap::new(),
        })
    }

    /// Inserts or overrides a value (command-line flags win over the file).
    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn get_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.touched.insert(key.to_string());
        let v = match self.values.get(key) {
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("key {key}: expected a number, got {raw:?}")))?,
            None => default,
        };
        self.echo.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.touched.insert(key.to_string());
        match self.values.get(key) {
            Some(raw) => {
                let v = raw.parse::<f64>().map_err(|_| {
                    Error::Config(format!("key {key}: expected a number, got {raw:?}"))
                })?;
                self.echo.insert(key.to_string(), format!("{v}"));
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn get_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.touched.insert(key.to_string());
        let v = match self.values.get(key) {
            Some(raw) => raw.parse::<usize>().map_err(|_| {
                Error::Config(format!("key {key}: expected a count, got {raw:?}"))
            })?,
            None => default,
        };
        self.echo.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.touched.insert(key.to_string());
        let v = match self.values.get(key) {
            Some(raw) => raw.parse::<u64>().map_err(|_| {
                Error::Config(format!("key {key}: expected an integer, got {raw:?}"))
            })?,
            None => default,
        };
        self.echo.insert(key.to_string(), format!("{v}"));
        Ok(v)
    }

    pub fn get_string(&mut self, key: &str, default: &str) -> String {
        self.touched.insert(key.to_string());
        let v = self
            .values
            .get(key)
            .cloned()
            .unwrap_or_else(|| default.to_string());
        self.echo.insert(key.to_string(), v.clone());
        v
    }

    pub fn get_f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        self.touched.insert(key.to_string());
        let v = match self.values.get(key) {
            Some(raw) => raw
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("key {key}: bad list entry {s:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
            None => default.to_vec(),
        };
        self.echo.insert(
            key.to_string(),
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        Ok(v)
    }

    /// Call after all keys were read: any remaining key is unknown.
    pub fn reject_unknown(&self) -> Result<()> {
        for key in self.values.keys() {
            if !self.touched.contains(key) {
                return Err(Error::Config(format!("unknown config key: {key}")));
            }
        }
        Ok(())
    }

    /// Effective configuration (defaults applied), for the manifest.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let mut c = Config::from_str_content("# comment\n dx = 0.1 # trailing\n\nseed=7\n").unwrap();
        assert_eq!(c.get_f64("dx", 0.0).unwrap(), 0.1);
        assert_eq!(c.get_u64("seed", 0).unwrap(), 7);
        c.reject_unknown().unwrap();
    }

    #[test]
    fn unknown_key_is_named() {
        let mut c = Config::from_str_content("dxx = 0.1\n").unwrap();
        let _ = c.get_f64("dx", 0.0);
        let err = c.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("dxx"), "{err}");
    }

    #[test]
    fn default_is_echoed() {
        let mut c = Config::from_str_content("").unwrap();
        assert_eq!(c.get_u64("seed", 0).unwrap(), 0);
        assert_eq!(c.echo().get("seed").unwrap(), "0");
    }

    #[test]
    fn malformed_line_is_rejected() {
        assert!(Config::from_str_content("just words\n").is_err());
    }

    #[test]
    fn lists_parse_and_echo() {
        let mut c = Config::from_str_content("schedule = 2, 4, 6\n").unwrap();
        assert_eq!(c.get_f64_list("schedule", &[]).unwrap(), vec![2.0, 4.0, 6.0]);
        assert_eq!(c.echo().get("schedule").unwrap(), "2,4,6");
    }
}
