//! Plain-text `key = value` configuration.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored,
//! whitespace around keys and values is trimmed, and a repeated key keeps
//! its last value. Keys use the long CLI flag names without the dashes
//! (`psf-sigma = 1.17`), so a file and the command line can be merged with
//! the flags taking precedence.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    /// Value and 1-based source line (0 for values set programmatically).
    entries: BTreeMap<String, (String, usize)>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            entries.insert(key.to_string(), (value.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Parsed value of `key`, or `None` if absent.
    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value.parse().map(Some).map_err(|e| Error::Config {
                line: *line,
                message: format!("`{key}`: {e}"),
            }),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Config {
            line: 0,
            message: format!("missing key `{key}`"),
        })
    }

    /// Fails on the first key not in `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, (_, line))) => Err(Error::Config {
                line: *line,
                message: format!("unknown key `{k}`"),
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_overrides() {
        let c = Config::parse("# run\nlambda = 5\n\n mode=tgv \nlambda=6.5\n").unwrap();
        assert_eq!(c.get::<f64>("lambda").unwrap(), Some(6.5));
        assert_eq!(c.raw("mode"), Some("tgv"));
        assert_eq!(c.get::<f64>("alpha").unwrap(), None);
        assert_eq!(c.keys().collect::<Vec<_>>(), ["lambda", "mode"]);
    }

    #[test]
    fn reports_line_numbers() {
        match Config::parse("a = 1\nnot a pair\n") {
            Err(Error::Config { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let c = Config::parse("x = 1\ny = abc\n").unwrap();
        match c.get::<f64>("y") {
            Err(Error::Config { line: 2, message }) => assert!(message.contains("`y`")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(c.check_keys(&["x"]), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn values_may_contain_equals() {
        let c = Config::parse("expr = a=b\n").unwrap();
        assert_eq!(c.raw("expr"), Some("a=b"));
    }
}
