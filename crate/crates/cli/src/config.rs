//! Flat `key = value` run configuration: built-in defaults, then an optional
//! config file, then `--key value` flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// One configurable key of a command.
pub struct Key {
    pub name: &'static str,
    /// `None` for required keys.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

pub const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: Some(default),
        help,
    }
}

pub const fn required(name: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default: None,
        help,
    }
}

/// The fully resolved configuration of one command invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
    /// Keys set by the config file or a flag rather than by a default.
    pub explicit: BTreeSet<String>,
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str, origin: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected `key = value`, got {raw:?}", origin.display(), i + 1))
        })?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn resolve(
        command: &str,
        keys: &[Key],
        file: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<RunConfig, CliError> {
        let known: BTreeSet<&str> = keys.iter().map(|k| k.name).collect();
        let mut values: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        let mut explicit = BTreeSet::new();
        let mut layers = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            layers.extend(parse_config_text(&text, path)?);
        }
        layers.extend(flags.iter().cloned());
        for (k, v) in layers {
            if !known.contains(k.as_str()) {
                return Err(CliError::Usage(format!("unknown key `{k}` for `{command}`")));
            }
            explicit.insert(k.clone());
            values.insert(k, v);
        }
        if let Some(missing) = keys.iter().find(|k| !values.contains_key(k.name)) {
            return Err(CliError::Usage(format!("`{command}` needs --{}", missing.name)));
        }
        Ok(RunConfig {
            command: command.to_string(),
            values,
            explicit,
        })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn is_set(&self, key: &str) -> bool {
        !self.str(key).is_empty()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .parse()
            .map_err(|e| CliError::Usage(format!("--{key} {:?}: {e}", self.str(key))))
    }

    /// `None` when the value is empty.
    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.is_set(key) {
            self.get(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            other => Err(CliError::Usage(format!("--{key}: expected true or false, got {other:?}"))),
        }
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    /// Comma-separated list, empty entries dropped.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.str(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Usage(format!("--{key} entry {s:?}: {e}"))))
            .collect()
    }

    /// The resolved configuration in the same format it is read from.
    pub fn to_text(&self) -> String {
        let mut out = format!("# {}\n", self.command);
        for (k, v) in &self.values {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the command and resolved values.
    pub fn hash(&self) -> String {
        let value = serde_json::json!({ "command": self.command, "values": self.values });
        guidevos::params::config_hash(&value)
    }
}
