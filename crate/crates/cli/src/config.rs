//! Layered `key = value` settings: config file, then flags, then `--set`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dtnt_core::model::parse_kv;
use dtnt_core::Error;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn config_err(msg: String) -> CliError {
    CliError::Core(Error::Config(msg))
}

impl Settings {
    /// Later layers win. Every key must satisfy `known`.
    pub fn layered(
        file: Option<&Path>,
        flags: Vec<(&str, Option<String>)>,
        overrides: &[String],
        known: impl Fn(&str) -> bool,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            pairs.extend(
                parse_kv(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?,
            );
        }
        pairs.extend(
            flags
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k.to_string(), v))),
        );
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{item}`")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut values = BTreeMap::new();
        for (k, v) in pairs {
            if !known(&k) {
                return Err(config_err(format!("unknown key `{k}`")));
            }
            values.insert(k, v);
        }
        Ok(Settings { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn parse_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| config_err(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| {
            CliError::Usage(format!(
                "missing required `{key}` (flag --{key} or config key)"
            ))
        })
    }
}

pub fn parse_betas(text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|b| {
            let b = b.trim();
            match b.parse::<f64>() {
                Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
                _ => Err(config_err(format!("invalid fog beta `{b}`"))),
            }
        })
        .collect()
}

pub fn format_betas(betas: &[f64]) -> String {
    betas
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// `key = value` lines in the given order.
pub fn render(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(k: &str) -> bool {
        matches!(k, "a" | "b" | "c")
    }

    #[test]
    fn later_layers_override_earlier_ones() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "# comment\na = 1\nb = 2  # trailing\n").unwrap();
        let s = Settings::layered(
            Some(&file),
            vec![("b", Some("3".into())), ("c", None)],
            &["a=9".into()],
            known,
        )
        .unwrap();
        assert_eq!(s.get("a"), Some("9"));
        assert_eq!(s.get("b"), Some("3"));
        assert_eq!(s.get("c"), None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Settings::layered(None, vec![], &["zzz=1".into()], known).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("zzz"));
    }

    #[test]
    fn malformed_override_is_a_usage_error() {
        let err = Settings::layered(None, vec![], &["novalue".into()], known).unwrap_err();
        assert_eq!(err.category(), "usage");
    }

    #[test]
    fn betas_round_trip() {
        let b = parse_betas("0.08, 0.16,0.24").unwrap();
        assert_eq!(b, vec![0.08, 0.16, 0.24]);
        assert_eq!(format_betas(&b), "0.08,0.16,0.24");
        assert!(parse_betas("-1").is_err());
        assert!(parse_betas("").unwrap().is_empty());
    }
}
