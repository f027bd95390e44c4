//! Scenario matrices in TOML.
//!
//! ```toml
//! [defaults]
//! rows = 100000
//! trials = 100
//!
//! [[scenario]]
//! name = "ordering"
//! strategy = ["seek", "two_phase"]   # lists expand into one scenario per value
//! sort_field = "IntField"
//! cluster = "IntField"
//! indices = ["ID", "TextField"]      # an index set; use a list of sets to sweep
//! ```
//!
//! Keys in `[defaults]` apply to every scenario unless overridden. Every list
//! value except `indices` is swept, and the sweeps combine as a cartesian
//! product.

use toml::{Table as TomlTable, Value};

use crate::bench::ScenarioConfig;
use crate::error::{Error, Result};

/// Refuse matrices that expand beyond this many scenarios.
pub const MAX_SCENARIOS: usize = 10_000;

pub const FULL_PRESET: &str = include_str!("../../../presets/full.toml");
pub const DESK_PRESET: &str = include_str!("../../../presets/desk.toml");

/// Resolves a preset name (`full`, `desk`) to its TOML text.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "full" => Some(FULL_PRESET),
        "desk" => Some(DESK_PRESET),
        _ => None,
    }
}

fn is_sweep(key: &str, value: &Value) -> bool {
    match value {
        Value::Array(items) if key == "indices" => {
            !items.is_empty() && items.iter().all(Value::is_array)
        }
        Value::Array(_) => true,
        _ => false,
    }
}

fn expand(entry: TomlTable) -> Result<Vec<TomlTable>> {
    let mut combos = vec![TomlTable::new()];
    for (key, value) in entry {
        if is_sweep(&key, &value) {
            let Value::Array(options) = value else {
                unreachable!()
            };
            if options.is_empty() {
                return Err(Error::Config(format!("sweep over {key:?} has no values")));
            }
            if combos.len().saturating_mul(options.len()) > MAX_SCENARIOS {
                return Err(Error::Config(format!(
                    "matrix expands to more than {MAX_SCENARIOS} scenarios"
                )));
            }
            let key = &key;
            let options = &options;
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    options.iter().map(move |o| {
                        let mut c = c.clone();
                        c.insert(key.clone(), o.clone());
                        c
                    })
                })
                .collect();
        } else {
            for c in &mut combos {
                c.insert(key.clone(), value.clone());
            }
        }
    }
    Ok(combos)
}

/// Parses a matrix document into concrete, validated scenarios.
pub fn parse_matrix(text: &str) -> Result<Vec<ScenarioConfig>> {
    let mut doc: TomlTable =
        toml::from_str(text).map_err(|e| Error::Config(format!("matrix: {e}")))?;
    let defaults = match doc.remove("defaults") {
        None => TomlTable::new(),
        Some(Value::Table(t)) => t,
        Some(_) => return Err(Error::Config("matrix: [defaults] must be a table".into())),
    };
    let entries = match doc.remove("scenario") {
        Some(Value::Array(items)) => items,
        None => return Err(Error::Config("matrix has no [[scenario]] entries".into())),
        Some(_) => {
            return Err(Error::Config(
                "matrix: scenario must be [[scenario]] tables".into(),
            ))
        }
    };
    if let Some(key) = doc.keys().next() {
        return Err(Error::Config(format!(
            "matrix: unknown top-level key {key:?}"
        )));
    }

    let mut scenarios = Vec::new();
    for (i, entry) in entries.into_iter().enumerate() {
        let Value::Table(entry) = entry else {
            return Err(Error::Config(format!(
                "matrix: scenario {i} is not a table"
            )));
        };
        let mut merged = defaults.clone();
        merged.extend(entry);
        let combos = expand(merged)?;
        if scenarios.len() + combos.len() > MAX_SCENARIOS {
            return Err(Error::Config(format!(
                "matrix expands to more than {MAX_SCENARIOS} scenarios"
            )));
        }
        let multiple = combos.len() > 1;
        for (k, combo) in combos.into_iter().enumerate() {
            let mut cfg: ScenarioConfig = Value::Table(combo)
                .try_into()
                .map_err(|e| Error::Config(format!("matrix: scenario {i}: {e}")))?;
            if multiple {
                if let Some(name) = &cfg.name {
                    cfg.name = Some(format!("{name}#{k}"));
                }
            }
            cfg.validate()
                .map_err(|e| Error::Config(format!("matrix: scenario {}: {e}", cfg.id())))?;
            scenarios.push(cfg);
        }
    }
    Ok(scenarios)
}
