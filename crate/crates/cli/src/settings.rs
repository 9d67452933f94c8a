//! `key = value` config files merged under command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    source: Option<String>,
    file: BTreeMap<String, (String, usize)>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{source}:{}: expected `key = value`", i + 1)))?;
            let key = key.trim().replace('_', "-");
            if key.is_empty() {
                return Err(CliError::Config(format!("{source}:{}: empty key", i + 1)));
            }
            if file.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(CliError::Config(format!("{source}:{}: duplicate key {key}", i + 1)));
            }
        }
        Ok(Settings {
            source: Some(source.to_string()),
            file,
            ..Default::default()
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|e| {
                CliError::Config(format!(
                    "{}:{line}: bad value {v:?} for {key}: {e}",
                    self.source.as_deref().unwrap_or("config")
                ))
            }),
        }
    }

    /// Flag, then config file, then `default`.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file_value(key)?;
        let v = flag.or(from_file).unwrap_or(default);
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file_value(key)?;
        let v = flag.or(from_file);
        if let Some(v) = &v {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Config(format!("--{key} is required (flag or config file)")))
    }

    /// Repeatable flag; in the config file a comma-separated list.
    pub fn list(&mut self, key: &str, flag: Vec<String>) -> Result<Vec<String>, CliError> {
        let from_file: Option<String> = self.file_value(key)?;
        let v = if flag.is_empty() {
            from_file
                .map(|s| s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect())
                .unwrap_or_default()
        } else {
            flag
        };
        if !v.is_empty() {
            self.resolved.push((key.to_string(), v.join(",")));
        }
        Ok(v)
    }

    pub fn flag(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.value(key, flag.then_some(true), false)
    }

    /// Rejects config-file keys the subcommand never asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<_> = self.file.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{}: unknown key(s) for this command: {}",
                self.source.as_deref().unwrap_or("config"),
                unknown.join(", ")
            )))
        }
    }

    /// Resolved values in the order they were requested.
    pub fn snapshot(&self, command: &str) -> String {
        let mut out = format!("# cmoment {command}\n");
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
