//! Flag/file/default resolution for experiment parameters.
//!
//! Each command accepts an optional plain-text config file of `key = value`
//! lines. Flags override file values, file values override defaults, and
//! every key is checked against the command's allowed set so typos fail
//! loudly before any computation starts.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Usage errors exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<dam_core::Error> for CliError {
    fn from(e: dam_core::Error) -> Self {
        use dam_core::Error as E;
        match e {
            E::InvalidParameter(_) | E::ShapeMismatch { .. } | E::Format(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[derive(Debug, Default)]
pub struct FileConfig {
    pairs: Vec<(String, String)>,
}

impl FileConfig {
    pub fn empty() -> Self {
        FileConfig::default()
    }

    /// Loads `key = value` lines; `#` starts a comment, blank lines are
    /// skipped. Unknown keys and malformed lines report their line number.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: expected `key = value`, got `{raw}`",
                    idx + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key `{key}`; allowed: {}",
                    idx + 1,
                    allowed.join(", ")
                )));
            }
            if value.is_empty() {
                return Err(CliError::Usage(format!(
                    "config line {}: key `{key}` has no value",
                    idx + 1
                )));
            }
            pairs.push((key, value));
        }
        Ok(FileConfig { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        // last occurrence wins, like flags repeated on a command line
        self.pairs
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parsed<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Usage(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }
}

/// flag > config file > default.
pub fn resolve<T>(flag: Option<T>, file: &FileConfig, key: &str, default: T) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.parsed(key)?.unwrap_or(default)),
    }
}

/// flag > config file; missing everywhere is a usage error.
pub fn resolve_required<T>(flag: Option<T>, file: &FileConfig, key: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => file.parsed(key)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required parameter `{key}` (flag --{} or config key)",
                key.replace('_', "-")
            ))
        }),
    }
}

pub const DEFAULT_SEED: u64 = 7;

/// --seed flag > config `seed` > DAM_SEED env > 7.
pub fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file.parsed::<u64>("seed")? {
        return Ok(s);
    }
    match std::env::var("DAM_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|e| CliError::Usage(format!("DAM_SEED: cannot parse `{raw}`: {e}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Comma-separated list parser for grid-valued flags.
pub fn parse_list<T>(raw: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    let items: Result<Vec<T>, CliError> = raw
        .split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<T>()
                .map_err(|e| CliError::Usage(format!("{what}: cannot parse `{s}`: {e}")))
        })
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(CliError::Usage(format!("{what}: empty list")));
    }
    Ok(items)
}
