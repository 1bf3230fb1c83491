//! Flat `key=value` text blocks, shared by WFLD/WFMD headers, run configs and
//! manifests.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `key=value` entries. Later `set` calls replace earlier values in
/// place, so serialisation order is stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvBlock {
    entries: Vec<(String, String)>,
}

impl KvBlock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a block. Blank lines and lines starting with `#` are skipped;
    /// keys and values are trimmed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut block = KvBlock::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Spec(format!("line {}: expected key=value, got `{line}`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Spec(format!("line {}: empty key", lineno + 1)));
            }
            block.set(key, value.trim());
        }
        Ok(block)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Spec(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::Spec(format!("key `{key}`: cannot parse `{raw}`"))),
        }
    }

    pub fn require_value<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?
            .ok_or_else(|| Error::Spec(format!("missing key `{key}`")))
    }

    /// Comma-separated list; an empty value yields an empty list.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => parse_list(raw)
                .map(Some)
                .map_err(|bad| Error::Spec(format!("key `{key}`: cannot parse list item `{bad}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies every entry of `other` on top of `self`.
    pub fn merge(&mut self, other: &KvBlock) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }
}

impl fmt::Display for KvBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|item| item.trim().parse().map_err(|_| item.trim().to_string()))
        .collect()
}

pub fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_overrides() {
        let block = KvBlock::parse("# header\na = 1\n\nb=x,y\na=2\n").unwrap();
        assert_eq!(block.get("a"), Some("2"));
        assert_eq!(block.parse_list::<String>("b").unwrap().unwrap(), vec!["x", "y"]);
        assert_eq!(block.to_string(), "a=2\nb=x,y\n");
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(KvBlock::parse("nonsense").is_err());
    }
}
