//! Flat dotted-key configuration (`buffer.design = "perrow"`).
//!
//! Files are TOML; nested tables and dotted keys are equivalent. Every key is
//! also settable from a `key=value` string, which is how CLI flags override
//! files one-to-one. [`dump`] emits the fully resolved configuration in the
//! same format, so its output loads back to an identical [`SimConfig`].

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::engine::SimConfig;
use crate::error::{Result, SimError};

/// Every recognised key, in dump order.
pub const KEYS: &[&str] = &[
    "seed",
    "geometry.banks",
    "geometry.counter_rows",
    "geometry.counters_per_row",
    "trace.path",
    "trace.generator",
    "trace.length",
    "trace.bank",
    "trace.banks",
    "trace.footprint",
    "trace.start_row",
    "trace.zipf_exponent",
    "trace.hot_rows",
    "trace.hot_fraction",
    "trace.target_row",
    "trace.gap",
    "buffer.design",
    "buffer.capacity",
    "buffer.m_batch",
    "buffer.k_limit",
    "buffer.k_trigger",
    "cache.kind",
    "cache.entries",
    "cache.sketch_width",
    "cache.halving_period",
    "mitigation.enabled",
    "mitigation.n_bo",
    "mitigation.rfms_per_alert",
    "mitigation.proactive_interval",
    "energy.e_act",
    "energy.e_col",
    "energy.counter_act_factor",
    "energy.e_extra_rmw",
    "metrics.enabled",
    "metrics.window",
    "metrics.window_mode",
    "debug.batch_log",
    "debug.counter_dump",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| SimError::Config(format!("invalid value {value:?} for {key}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// Sets one key from its textual value.
pub fn set(c: &mut SimConfig, key: &str, value: &str) -> Result<()> {
    let v = value;
    match key {
        "seed" => c.seed = parse(key, v)?,
        "geometry.banks" => c.geometry.banks = parse(key, v)?,
        "geometry.counter_rows" => c.geometry.counter_rows_per_bank = parse(key, v)?,
        "geometry.counters_per_row" => c.geometry.counters_per_counter_row = parse(key, v)?,
        "trace.path" => c.trace_path = path(v),
        "trace.generator" => c.trace.generator = parse(key, v)?,
        "trace.length" => c.trace.length = parse(key, v)?,
        "trace.bank" => c.trace.bank = parse(key, v)?,
        "trace.banks" => c.trace.banks = parse(key, v)?,
        "trace.footprint" => c.trace.footprint = parse(key, v)?,
        "trace.start_row" => c.trace.start_row = parse(key, v)?,
        "trace.zipf_exponent" => c.trace.zipf_exponent = parse(key, v)?,
        "trace.hot_rows" => c.trace.hot_rows = parse(key, v)?,
        "trace.hot_fraction" => c.trace.hot_fraction = parse(key, v)?,
        "trace.target_row" => c.trace.target_row = parse(key, v)?,
        "trace.gap" => c.trace.gap = parse(key, v)?,
        "buffer.design" => c.buffer.design = parse(key, v)?,
        "buffer.capacity" => c.buffer.capacity = parse(key, v)?,
        "buffer.m_batch" => c.buffer.m_batch = parse(key, v)?,
        "buffer.k_limit" => c.buffer.k_limit = parse(key, v)?,
        "buffer.k_trigger" => c.buffer.k_trigger = parse(key, v)?,
        "cache.kind" => c.cache.kind = parse(key, v)?,
        "cache.entries" => c.cache.entries = parse(key, v)?,
        "cache.sketch_width" => c.cache.sketch_width = parse(key, v)?,
        "cache.halving_period" => c.cache.halving_period = parse(key, v)?,
        "mitigation.enabled" => c.mitigation.enabled = parse(key, v)?,
        "mitigation.n_bo" => c.mitigation.n_bo = parse(key, v)?,
        "mitigation.rfms_per_alert" => c.mitigation.rfms_per_alert = parse(key, v)?,
        "mitigation.proactive_interval" => {
            let slots: u64 = parse(key, v)?;
            c.mitigation.proactive_interval_slots = (slots > 0).then_some(slots);
        }
        "energy.e_act" => c.energy.e_act = parse(key, v)?,
        "energy.e_col" => c.energy.e_col = parse(key, v)?,
        "energy.counter_act_factor" => c.energy.counter_act_factor = parse(key, v)?,
        "energy.e_extra_rmw" => c.energy.e_extra_rmw = parse(key, v)?,
        "metrics.enabled" => c.metrics.enabled = parse(key, v)?,
        "metrics.window" => c.metrics.window = parse(key, v)?,
        "metrics.window_mode" => c.metrics.window_mode = parse(key, v)?,
        "debug.batch_log" => c.debug.batch_log = path(v),
        "debug.counter_dump" => c.debug.counter_dump = path(v),
        _ => return Err(SimError::Config(format!("unknown config key {key:?}"))),
    }
    if key.starts_with("geometry.") {
        c.geometry.rows_per_bank = c.geometry.counter_rows_per_bank.saturating_mul(c.geometry.counters_per_counter_row);
    }
    Ok(())
}

/// Applies a `key=value` override.
pub fn set_pair(c: &mut SimConfig, pair: &str) -> Result<()> {
    let (key, value) = pair
        .split_once('=')
        .ok_or_else(|| SimError::Config(format!("expected key=value, got {pair:?}")))?;
    set(c, key.trim(), value.trim())
}

enum Value {
    Str(String),
    Raw(String),
}

fn get(c: &SimConfig, key: &str) -> Option<Value> {
    use Value::*;
    let s = |x: &str| Some(Str(x.to_string()));
    let r = |x: String| Some(Raw(x));
    // TOML integers are i64; larger u64 values travel as strings.
    let u = |x: u64| Some(if x > i64::MAX as u64 { Str(x.to_string()) } else { Raw(x.to_string()) });
    let p = |x: &Option<PathBuf>| x.as_ref().map(|p| Str(p.display().to_string()));
    // f64 Display is the shortest round-tripping form; keep a decimal point so
    // the value stays a TOML float.
    let f = |x: f64| {
        let t = x.to_string();
        Some(Raw(if t.contains(['.', 'e', 'i', 'N']) { t } else { format!("{t}.0") }))
    };
    match key {
        "seed" => u(c.seed),
        "geometry.banks" => r(c.geometry.banks.to_string()),
        "geometry.counter_rows" => r(c.geometry.counter_rows_per_bank.to_string()),
        "geometry.counters_per_row" => r(c.geometry.counters_per_counter_row.to_string()),
        "trace.path" => p(&c.trace_path),
        "trace.generator" => s(c.trace.generator.name()),
        "trace.length" => u(c.trace.length),
        "trace.bank" => r(c.trace.bank.to_string()),
        "trace.banks" => r(c.trace.banks.to_string()),
        "trace.footprint" => r(c.trace.footprint.to_string()),
        "trace.start_row" => r(c.trace.start_row.to_string()),
        "trace.zipf_exponent" => f(c.trace.zipf_exponent),
        "trace.hot_rows" => r(c.trace.hot_rows.to_string()),
        "trace.hot_fraction" => f(c.trace.hot_fraction),
        "trace.target_row" => r(c.trace.target_row.to_string()),
        "trace.gap" => r(c.trace.gap.to_string()),
        "buffer.design" => s(c.buffer.design.name()),
        "buffer.capacity" => r(c.buffer.capacity.to_string()),
        "buffer.m_batch" => r(c.buffer.m_batch.to_string()),
        "buffer.k_limit" => r(c.buffer.k_limit.to_string()),
        "buffer.k_trigger" => s(c.buffer.k_trigger.name()),
        "cache.kind" => s(c.cache.kind.name()),
        "cache.entries" => r(c.cache.entries.to_string()),
        "cache.sketch_width" => r(c.cache.sketch_width.to_string()),
        "cache.halving_period" => u(c.cache.halving_period),
        "mitigation.enabled" => r(c.mitigation.enabled.to_string()),
        "mitigation.n_bo" => r(c.mitigation.n_bo.to_string()),
        "mitigation.rfms_per_alert" => r(c.mitigation.rfms_per_alert.to_string()),
        "mitigation.proactive_interval" => u(c.mitigation.proactive_interval_slots.unwrap_or(0)),
        "energy.e_act" => f(c.energy.e_act),
        "energy.e_col" => f(c.energy.e_col),
        "energy.counter_act_factor" => f(c.energy.counter_act_factor),
        "energy.e_extra_rmw" => f(c.energy.e_extra_rmw),
        "metrics.enabled" => r(c.metrics.enabled.to_string()),
        "metrics.window" => r(c.metrics.window.to_string()),
        "metrics.window_mode" => s(c.metrics.window_mode.name()),
        "debug.batch_log" => p(&c.debug.batch_log),
        "debug.counter_dump" => p(&c.debug.counter_dump),
        _ => None,
    }
}

/// The fully resolved configuration, one `key = value` line per set key.
pub fn dump(c: &SimConfig) -> String {
    let mut out = String::new();
    for key in KEYS {
        match get(c, key) {
            Some(Value::Str(v)) => out.push_str(&format!("{key} = {}\n", toml::Value::String(v))),
            Some(Value::Raw(v)) => out.push_str(&format!("{key} = {v}\n")),
            None => {}
        }
    }
    out
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) -> Result<()> {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out)?,
            toml::Value::String(s) => out.push((key, s.clone())),
            toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => out.push((key, v.to_string())),
            _ => return Err(SimError::Config(format!("unsupported value type for {key}"))),
        }
    }
    Ok(())
}

/// Applies the keys of a TOML document on top of `c`.
pub fn apply_str(c: &mut SimConfig, text: &str) -> Result<()> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SimError::Config(e.message().to_string()))?;
    let mut pairs = Vec::new();
    flatten("", &table, &mut pairs)?;
    for (k, v) in pairs {
        set(c, &k, &v)?;
    }
    Ok(())
}

/// Loads a config file over the defaults.
pub fn load(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    let mut c = SimConfig::default();
    apply_str(&mut c, &text)?;
    Ok(c)
}
