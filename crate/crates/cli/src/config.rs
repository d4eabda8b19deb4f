//! Layered settings: command-line flag, then config file, then default.
//!
//! Config files are flat `key = value` text; `#` starts a comment. Keys are
//! the long flag names.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key = value", i + 1);
            };
            file.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self {
            file,
            used: BTreeMap::new(),
        })
    }

    /// Adds `other`'s entries for keys not present here.
    pub fn with_fallback(mut self, other: Settings) -> Self {
        for (k, v) in other.file {
            self.file.entry(k).or_insert(v);
        }
        self
    }

    fn raw(&self, key: &str, flag: Option<&str>) -> Option<String> {
        flag.map(str::to_string)
            .or_else(|| self.file.get(key).cloned())
    }

    /// Optional setting: flag, then file.
    pub fn opt<T: FromStr>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key, flag) {
            Some(s) => {
                let v = s
                    .parse::<T>()
                    .map_err(|e| anyhow::anyhow!("bad value '{s}' for {key}: {e}"))?;
                self.used.insert(key.to_string(), s);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    /// Setting with a default.
    pub fn get<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: T,
    ) -> Result<T>
    where
        T::Err: Display,
    {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.used.insert(key.to_string(), default.to_string());
                Ok(default)
            }
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(
        &mut self,
        key: &str,
        flag: Option<&str>,
        default: &str,
    ) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let s = self.raw(key, flag).unwrap_or_else(|| default.to_string());
        let v = parse_list(&s).with_context(|| format!("for {key}"))?;
        self.used.insert(key.to_string(), s);
        Ok(v)
    }

    /// Switch that a flag can only turn on.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let on = if flag {
            true
        } else {
            match self.file.get(key).map(String::as_str) {
                None | Some("false") => false,
                Some("true") => true,
                Some(other) => bail!("bad value '{other}' for {key}: expected true or false"),
            }
        };
        self.used.insert(key.to_string(), on.to_string());
        Ok(on)
    }

    /// Records a value that was not read through the layers.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.used.insert(key.to_string(), value.to_string());
    }

    /// Fails on config keys that the command never asked for.
    pub fn check_unused(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains_key(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {}", unknown.join(", "));
        }
        Ok(())
    }

    /// Resolved values in key order.
    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.used
    }

    /// Resolved values as config text, readable by [`Settings::parse`].
    pub fn to_text(&self) -> String {
        self.used
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad list item '{p}': {e}"))
        })
        .collect()
}
