//! Plain-text `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Configuration structs implement [`KvConfig`] so that a file can be applied
//! on top of defaults and every value can be written back out for manifests.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown configuration key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        line: usize,
        reason: String,
    },
    /// A merged configuration that fails a range or consistency check.
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl KvEntry {
    pub fn invalid(&self, reason: impl Into<String>) -> ConfigError {
        ConfigError::InvalidValue {
            key: self.key.clone(),
            value: self.value.clone(),
            line: self.line,
            reason: reason.into(),
        }
    }

    pub fn parse<T: FromStr>(&self, v: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        v.trim().parse::<T>().map_err(|e| self.invalid(e.to_string()))
    }

    pub fn parse_f64(&self, v: &str) -> Result<f64, ConfigError> {
        let x: f64 = self.parse(v)?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(self.invalid("not a finite number"))
        }
    }

    pub fn parse_u32(&self, v: &str) -> Result<u32, ConfigError> {
        self.parse(v)
    }

    pub fn parse_bool(&self, v: &str) -> Result<bool, ConfigError> {
        match v.trim() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            _ => Err(self.invalid("expected a boolean")),
        }
    }

    /// Comma-separated list of numbers.
    pub fn parse_f64_list(&self, v: &str) -> Result<Vec<f64>, ConfigError> {
        v.split(',').map(|s| self.parse_f64(s)).collect()
    }

    pub fn unknown(&self) -> ConfigError {
        ConfigError::UnknownKey {
            key: self.key.clone(),
            line: self.line,
        }
    }
}

pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            });
        }
        out.push(KvEntry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

/// A configuration block that can be updated from key-value entries.
pub trait KvConfig {
    /// Applies one entry. Returns `Ok(false)` when the key does not belong to this block.
    fn apply(&mut self, entry: &KvEntry) -> Result<bool, ConfigError>;

    /// All values, in a stable order, as `(key, value)` pairs.
    fn entries(&self) -> Vec<(String, String)>;

    fn validate(&self) -> Result<(), ConfigError> {
        Ok(())
    }
}

/// Applies every entry to the first block that claims it; unclaimed keys are errors
/// unless listed in `ignored`.
pub fn apply_all(
    entries: &[KvEntry],
    blocks: &mut [&mut dyn KvConfig],
    ignored: &[&str],
) -> Result<(), ConfigError> {
    'entry: for e in entries {
        for b in blocks.iter_mut() {
            if b.apply(e)? {
                continue 'entry;
            }
        }
        if ignored.iter().any(|p| e.key == *p || (p.ends_with('*') && e.key.starts_with(&p[..p.len() - 1]))) {
            continue;
        }
        return Err(e.unknown());
    }
    for b in blocks.iter() {
        b.validate()?;
    }
    Ok(())
}

pub fn render_kv(entries: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}
