//! `key = value` config files and flag/file resolution. Keys are the long
//! flag names without dashes; a flag given on the command line wins.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    "all-step-loss",
    "attribution-source",
    "batch-size",
    "counties",
    "crop",
    "data",
    "folds",
    "fractions",
    "halve-every",
    "iters",
    "k",
    "lambdas",
    "log-every",
    "lr",
    "model",
    "model-file",
    "out",
    "seed",
    "select-year",
    "sources",
    "states",
    "step",
    "threads",
    "trees",
    "weeks",
    "year",
    "years",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    source: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn parse(source: &str, text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::usage(format!("{source}, line {}: expected key = value", i + 1)));
            };
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::usage(format!("{source}, line {}: unknown key '{key}'", i + 1)));
            }
            if entries.insert(key.clone(), (value.trim().to_string(), i + 1)).is_some() {
                return Err(CliError::usage(format!("{source}, line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Self {
            source: source.to_string(),
            entries,
        })
    }

    /// The flag value if present, else the file value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "unlisted key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.entries.get(key) {
            None => Ok(None),
            Some((value, line)) => value
                .parse()
                .map(Some)
                .map_err(|e| CliError::usage(format!("{}, line {line}: {key}: {e}", self.source))),
        }
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::usage(format!("missing --{key} (flag or config key)")))
    }
}

/// Comma-separated values.
#[derive(Clone, Debug, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("'{}': {e}", p.trim())))
            .collect::<Result<Vec<T>, String>>()
            .and_then(|v| if v.is_empty() { Err("empty list".into()) } else { Ok(List(v)) })
    }
}

/// Inclusive `A:B` range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Span<T>(pub T, pub T);

impl<T: FromStr + PartialOrd> FromStr for Span<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got '{s}'"))?;
        let a: T = a.trim().parse().map_err(|e| format!("'{a}': {e}"))?;
        let b: T = b.trim().parse().map_err(|e| format!("'{b}': {e}"))?;
        if a > b {
            return Err(format!("range '{s}' is decreasing"));
        }
        Ok(Span(a, b))
    }
}

/// Weeks as `A:B` or a comma list.
#[derive(Clone, Debug, PartialEq)]
pub struct Weeks(pub Vec<usize>);

impl FromStr for Weeks {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let weeks = if s.contains(':') {
            let Span(a, b) = s.parse::<Span<usize>>()?;
            (a..=b).collect()
        } else {
            s.parse::<List<usize>>()?.0
        };
        if let Some(w) = weeks.iter().find(|w| !(1..=52).contains(*w)) {
            return Err(format!("week {w} outside 1..=52"));
        }
        Ok(Weeks(weeks))
    }
}
