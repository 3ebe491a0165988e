//! Flat `key=value` configuration.
//!
//! Files hold one `key=value` per line; `#` starts a comment. Every config
//! struct lists its keys through [`KeyValue`], and values print with Rust's
//! shortest round-trip formatting so an echoed config reloads exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub trait KeyValue {
    /// Current values in a stable order.
    fn echo(&self) -> Vec<(&'static str, String)>;
    /// Sets `key` if this struct owns it; `Ok(false)` if it does not.
    fn set(&mut self, key: &str, value: &str) -> Result<bool>;
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("invalid value `{value}` for `{key}`")))
}

macro_rules! key_value {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::KeyValue for $ty {
            fn echo(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($field), self.$field.to_string())),*]
            }

            fn set(&mut self, key: &str, value: &str) -> $crate::error::Result<bool> {
                match key {
                    $(stringify!($field) => {
                        self.$field = $crate::config::parse_value(key, value)?;
                        Ok(true)
                    })*
                    _ => Ok(false),
                }
            }
        }
    };
}
pub(crate) use key_value;

/// Reads `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((i, line))
        })
        .map(|(i, line)| {
            line.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::usage(format!("config line {}: expected key=value, got `{line}`", i + 1)))
        })
        .collect()
}

pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    parse_pairs(&fs::read_to_string(path)?)
}

/// Applies pairs to a set of config sections; a key no section owns is an error.
pub fn apply_pairs(pairs: &[(String, String)], sections: &mut [&mut dyn KeyValue]) -> Result<()> {
    for (k, v) in pairs {
        let mut taken = false;
        for s in sections.iter_mut() {
            if s.set(k, v)? {
                taken = true;
                break;
            }
        }
        if !taken {
            return Err(Error::usage(format!("unknown config key `{k}`")));
        }
    }
    Ok(())
}
