//! Versioned key-value text documents.
//!
//! Grammar, one item per line:
//!
//! ```text
//! document := line*
//! line     := blank | comment | entry
//! comment  := '#' any*
//! entry    := key ws* '=' ws* value
//! key      := [A-Za-z0-9_.-]+
//! value    := any*            (trimmed; may be empty)
//! ```
//!
//! The first entry must be `schema = <name>/<version>`. Keys are unique.
//! Spec files use schema `trex-spec/1`, run configs `trex-config/1`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvDoc {
    pub schema: String,
    entries: Vec<(String, String)>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl KvDoc {
    pub fn new(schema: impl Into<String>) -> Self {
        KvDoc {
            schema: schema.into(),
            entries: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc: Option<KvDoc> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid!("line {}: expected `key = value`", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !valid_key(key) {
                return Err(invalid!("line {}: bad key `{key}`", lineno + 1));
            }
            match doc.as_mut() {
                None if key == "schema" => doc = Some(KvDoc::new(value)),
                None => {
                    return Err(invalid!(
                        "line {}: first entry must be `schema = ...`, found `{key}`",
                        lineno + 1
                    ))
                }
                Some(d) => {
                    if key == "schema" || d.get(key).is_some() {
                        return Err(invalid!("line {}: duplicate key `{key}`", lineno + 1));
                    }
                    d.entries.push((key.to_string(), value.to_string()));
                }
            }
        }
        doc.ok_or_else(|| invalid!("empty document: missing `schema` entry"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| invalid!("{}: {e}", path.display()))
    }

    pub fn expect_schema(&self, expected: &str) -> Result<()> {
        if self.schema != expected {
            return Err(Error::Schema {
                what: "key-value document".into(),
                expected: expected.into(),
                found: self.schema.clone(),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| invalid!("missing required key `{key}`"))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| invalid!("key `{key}`: cannot parse `{v}`: {e}"))
            })
            .transpose()
    }

    pub fn parse_required<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_value(key)?
            .ok_or_else(|| invalid!("missing required key `{key}`"))
    }

    /// Whitespace-separated list of values.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split_whitespace()
                    .map(|item| {
                        item.parse::<T>()
                            .map_err(|e| invalid!("key `{key}`: cannot parse `{item}`: {e}"))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Inserts or replaces an entry, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn render(&self) -> String {
        let mut out = format!("schema = {}\n", self.schema);
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
