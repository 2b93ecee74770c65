//! Loosely typed argument maps carried by metric and remedy specs.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};

pub type Args = BTreeMap<String, Value>;

pub fn get_f64(args: &Args, key: &str) -> Result<Option<f64>> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| bad(key, "a finite number")),
    }
}

pub fn get_u64(args: &Args, key: &str) -> Result<Option<u64>> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(Some)
            .ok_or_else(|| bad(key, "a non-negative integer")),
    }
}

pub fn get_usize(args: &Args, key: &str) -> Result<Option<usize>> {
    Ok(get_u64(args, key)?.map(|v| v as usize))
}

pub fn get_strings(args: &Args, key: &str) -> Result<Option<Vec<String>>> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| bad(key, "a list of strings"))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some),
        Some(_) => Err(bad(key, "a list of strings")),
    }
}

fn bad(key: &str, expected: &str) -> Error {
    Error::config(key, format!("expected {expected}"))
}
