//! UTF-8 key-value experiment descriptors with `[section]` headers,
//! `key = value` entries and `#` comments. Parsing keeps the source line of
//! every entry so lookups can point at the offending position.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config line {line}: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed config: `section.key -> value`, plus source lines for messages.
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<(String, String), Entry>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(lineno), "unterminated section header"))?
                    .trim();
                if name.is_empty() {
                    return Err(err(Some(lineno), "empty section name"));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(Some(lineno), "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(err(Some(lineno), "empty key"));
            }
            if section.is_empty() {
                return Err(err(Some(lineno), format!("key `{key}` outside any [section]")));
            }
            let prev = entries.insert(
                (section.clone(), key.to_string()),
                Entry { value: value.trim().to_string(), line: lineno },
            );
            if let Some(prev) = prev {
                return Err(err(
                    Some(lineno),
                    format!("duplicate key `{section}.{key}` (first set on line {})", prev.line),
                ));
            }
        }
        Ok(Config { entries })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries.get(&(section.to_string(), key.to_string())).map(|e| e.value.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key)
            .ok_or_else(|| err(None, format!("missing required key `{section}.{key}`")))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let entry = self
            .entries
            .get(&(section.to_string(), key.to_string()))
            .ok_or_else(|| err(None, format!("missing required key `{section}.{key}`")))?;
        entry.value.parse::<f64>().map_err(|_| {
            err(Some(entry.line), format!("`{section}.{key}` = `{}` is not a number", entry.value))
        })
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            Some(_) => self.f64(section, key),
            None => Ok(default),
        }
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        let entry = self
            .entries
            .get(&(section.to_string(), key.to_string()))
            .ok_or_else(|| err(None, format!("missing required key `{section}.{key}`")))?;
        entry.value.parse::<usize>().map_err(|_| {
            err(Some(entry.line), format!("`{section}.{key}` = `{}` is not an integer", entry.value))
        })
    }

    /// Keys of a section, in sorted order.
    pub fn section_keys(&self, section: &str) -> Vec<&str> {
        self.entries
            .keys()
            .filter(|(s, _)| s == section)
            .map(|(_, k)| k.as_str())
            .collect()
    }

    /// Semicolon-separated groups of whitespace-separated numbers, e.g.
    /// `0.5 0.0 1.0 ; -2.0 0.0 1.0`.
    pub fn point_list(&self, section: &str, key: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
        let entry = self
            .entries
            .get(&(section.to_string(), key.to_string()))
            .ok_or_else(|| err(None, format!("missing required key `{section}.{key}`")))?;
        let mut out = Vec::new();
        for group in entry.value.split(';') {
            let nums: Result<Vec<f64>, _> =
                group.split_whitespace().map(|t| t.parse::<f64>()).collect();
            let nums = nums.map_err(|_| {
                err(Some(entry.line), format!("`{section}.{key}`: `{group}` is not numeric"))
            })?;
            if !nums.is_empty() {
                out.push(nums);
            }
        }
        if out.is_empty() {
            return Err(err(Some(entry.line), format!("`{section}.{key}` lists no points")));
        }
        Ok(out)
    }
}
