//! Flat `key = value` run configuration.
//!
//! Each command declares its keys with defaults. A config file may set any
//! of them, and command-line flags override the file. Unknown keys are
//! errors. `#` starts a comment line.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::failure::{CmdResult, Failure};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    command: &'static str,
    values: Vec<(&'static str, String)>,
}

impl RunConfig {
    /// Starts from the given defaults; their keys are the only legal ones.
    pub fn new(command: &'static str, defaults: Vec<(&'static str, String)>) -> Self {
        Self {
            command,
            values: defaults,
        }
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    pub fn keys(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.values.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CmdResult<()> {
        let value = value.into();
        if value.contains('\n') {
            return Err(Failure::Usage(format!("{key}: value spans lines")));
        }
        match self.values.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => {
                *v = value;
                Ok(())
            }
            None => Err(Failure::Usage(format!(
                "unknown config key {key:?} for {}; known keys: {}",
                self.command,
                self.keys().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Applies every assignment in `text`. A key given twice is an error.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> CmdResult<()> {
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Failure::Usage(format!("{origin}:{}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(bad(format!("{key} set twice")));
            }
            self.set(key, value.trim())
                .map_err(|e| bad(e.to_string()))?;
            seen.push(key.to_string());
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> CmdResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Overrides from flags; `None` leaves the current value.
    pub fn merge_flags(&mut self, flags: Vec<(&'static str, Option<String>)>) -> CmdResult<()> {
        for (key, value) in flags {
            if let Some(v) = value {
                self.set(key, v)?;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("{} has no key {key}", self.command))
    }

    pub fn parse<T>(&self, key: &str) -> CmdResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| Failure::Usage(format!("config key {key} = {raw:?}: {e}")))
    }

    /// A path value; empty means unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# resolved {} configuration\n", self.command);
        for (k, v) in &self.values {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> CmdResult<()> {
        fs::write(path, self.to_text())
            .map_err(|e| Failure::Data(format!("writing {}: {e}", path.display())))
    }
}
