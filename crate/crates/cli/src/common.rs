//! Config resolution, output stamping and exit-code mapping shared by all
//! subcommands.

use std::fmt;
use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const SEED_ENV: &str = "PROXYFORGE_SEED";

/// A user-facing validation failure (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 1 for validation errors, 2 for everything else (I/O and the like).
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<serde_json::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<proxyforge::Error>() {
            return match e {
                proxyforge::Error::Io(_) => 2,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    2
}

/// A config file overlaid with command-line flags.
pub struct ConfigDoc(Map<String, Value>);

impl ConfigDoc {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self(Map::new()));
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        match serde_json::from_str::<Value>(text)? {
            Value::Object(map) => Ok(Self(map)),
            _ => Err(invalid("config must be a JSON object")),
        }
    }

    pub fn from_value(value: Value) -> Result<Self> {
        match value {
            Value::Object(map) => Ok(Self(map)),
            _ => Err(invalid("config must be a JSON object")),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has(&self, path: &[&str]) -> bool {
        let mut cur = &self.0;
        for (i, key) in path.iter().enumerate() {
            match cur.get(*key) {
                Some(v) if i + 1 == path.len() => return !v.is_null(),
                Some(Value::Object(m)) => cur = m,
                _ => return false,
            }
        }
        false
    }

    /// Sets `path` when a flag was given; missing parents are created.
    pub fn set<T: Serialize>(&mut self, path: &[&str], value: Option<T>) -> Result<()> {
        let Some(value) = value else {
            return Ok(());
        };
        let value = serde_json::to_value(value)?;
        let (last, parents) = path.split_last().expect("non-empty path");
        let mut cur = &mut self.0;
        for key in parents {
            let entry = cur
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            if !entry.is_object() {
                return Err(invalid(format!("config field `{key}` must be an object")));
            }
            cur = entry.as_object_mut().expect("checked above");
        }
        cur.insert(last.to_string(), value);
        Ok(())
    }

    /// Fills `path` from `PROXYFORGE_SEED` when neither the config nor a flag
    /// set it.
    pub fn seed_fallback(&mut self, path: &[&str]) -> Result<()> {
        if self.has(path) {
            return Ok(());
        }
        match std::env::var(SEED_ENV) {
            Ok(raw) => {
                let seed: u64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| invalid(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
                self.set(path, Some(seed))
            }
            Err(_) => Ok(()),
        }
    }

    pub fn finish<T: DeserializeOwned>(self, what: &str) -> Result<T> {
        serde_json::from_value(Value::Object(self.0))
            .map_err(|e| invalid(format!("invalid {what} config: {e}")))
    }
}

/// Hash of a command config. Top-level output locations are left out so the
/// same run written elsewhere carries the same hash.
pub fn config_hash<T: Serialize>(value: &T, outputs: &[&str]) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    if let Value::Object(m) = &mut v {
        for k in outputs {
            m.remove(*k);
        }
    }
    Ok(proxyforge::io::config_hash(&v)?)
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

pub fn header(kind: &str, hash: &str) -> proxyforge::io::JsonlHeader {
    proxyforge::io::JsonlHeader {
        kind: kind.into(),
        config_hash: hash.into(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    proxyforge::io::write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    proxyforge::io::read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}
