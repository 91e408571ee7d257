//! Run manifests: every resolved input of a command, enough to replay it.
//!
//! ```text
//! command = estimate
//! version = 0.1.0
//! input.dataset = data/approach
//! config.gamma_s = 30
//! ...
//! wall_clock_s = 1.234
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dockport::config::{apply_all, parse_kv, KvConfig, KvEntry};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Resolved inputs, outputs, options and configuration, in write order.
    pub entries: Vec<(String, String)>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, entries: Vec<(String, String)>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            entries,
            wall_clock_s: 0.0,
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("command = {}\nversion = {}\n", self.command, self.version);
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("wall_clock_s = {:.3}\n", self.wall_clock_s));
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut command = None;
        let mut version = String::new();
        let mut wall_clock_s = 0.0;
        let mut entries = Vec::new();
        for e in parse_kv(text)? {
            match e.key.as_str() {
                "command" => command = Some(e.value),
                "version" => version = e.value,
                "wall_clock_s" => wall_clock_s = e.parse_f64(&e.value)?,
                _ => entries.push((e.key, e.value)),
            }
        }
        Ok(Self {
            command: command.ok_or_else(|| CliError::Config("manifest has no `command`".into()))?,
            version,
            entries,
            wall_clock_s,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn lookup(&self) -> Lookup<'_> {
        Lookup(self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect())
    }
}

/// Key access over a manifest's entries.
pub struct Lookup<'a>(BTreeMap<&'a str, &'a str>);

impl Lookup<'_> {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).copied()
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("manifest is missing `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.require(key).map(PathBuf::from)
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse()
            .map_err(|e| CliError::Config(format!("manifest value `{v}` for `{key}`: {e}")))
    }

    /// Values of `prefix.0`, `prefix.1`, … in order.
    pub fn list(&self, prefix: &str) -> Vec<&str> {
        (0..).map_while(|i| self.get(&format!("{prefix}.{i}"))).collect()
    }

    /// Entries under `prefix.` with the prefix removed.
    pub fn section(&self, prefix: &str) -> Vec<KvEntry> {
        let p = format!("{prefix}.");
        self.0
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(&p).map(|key| KvEntry {
                    key: key.to_string(),
                    value: v.to_string(),
                    line: 0,
                })
            })
            .collect()
    }
}

/// `config.<key>` entries for every value of a configuration block.
pub fn config_entries(cfg: &dyn KvConfig) -> Vec<(String, String)> {
    cfg.entries().into_iter().map(|(k, v)| (format!("config.{k}"), v)).collect()
}

/// Applies a config file (if any) on top of `cfg`; unknown keys are errors.
pub fn apply_config_file(cfg: &mut dyn KvConfig, path: Option<&Path>) -> Result<(), CliError> {
    let Some(path) = path else {
        return cfg.validate().map_err(Into::into);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries = parse_kv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    apply_all(&entries, &mut [cfg], &[]).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Rebuilds a configuration block from a manifest's `config.` section.
pub fn apply_config_section(cfg: &mut dyn KvConfig, lookup: &Lookup<'_>) -> Result<(), CliError> {
    apply_all(&lookup.section("config"), &mut [cfg], &[]).map_err(Into::into)
}

/// `<file>.manifest.txt` next to a file output.
pub fn manifest_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.txt");
    out.with_file_name(name)
}
