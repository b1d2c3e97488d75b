//! Flat JSON experiment configuration with per-kind defaults.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Escape,
    Equivalence,
    Convergence,
    Constants,
    NoiseSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Escape,
        ExperimentKind::Equivalence,
        ExperimentKind::Convergence,
        ExperimentKind::Constants,
        ExperimentKind::NoiseSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Escape => "escape",
            ExperimentKind::Equivalence => "equivalence",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Constants => "constants",
            ExperimentKind::NoiseSweep => "noise_sweep",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KeyType {
    Number,
    Integer,
    Text,
    NumberList,
    OptNumber,
    OptText,
}

struct KeySpec {
    name: &'static str,
    ty: KeyType,
    default: Value,
}

fn key(name: &'static str, ty: KeyType, default: Value) -> KeySpec {
    KeySpec { name, ty, default }
}

fn key_specs(kind: ExperimentKind) -> Vec<KeySpec> {
    use KeyType::*;
    let out = |k: ExperimentKind| json!(format!("results/{}", k.name()));
    let grid = || {
        vec![
            key("grid_lo", Number, json!(1e-5)),
            key("grid_hi", Number, json!(1.0)),
            key("grid_count", Integer, json!(4)),
            key("grid_mode", Text, json!("log_centered")),
        ]
    };
    let histogram = || {
        vec![
            key("radius", Number, json!(10.0)),
            key("hist_lo", Number, json!(-50.0)),
            key("hist_hi", Number, json!(50.0)),
            key("hist_bins", Integer, json!(50)),
        ]
    };
    let toy = || vec![key("a", Number, json!(10.0)), key("b", Number, json!(1.0))];
    let mut keys = vec![key("seed", Integer, json!(0)), key("out", Text, out(kind))];
    match kind {
        ExperimentKind::Escape | ExperimentKind::NoiseSweep => {
            keys.extend([
                key("replicas", Integer, json!(1000)),
                key("steps", Integer, json!(100)),
                key("x0_lo", Number, json!(-400.0)),
                key("x0_hi", Number, json!(400.0)),
                key("gamma", OptNumber, Value::Null),
                key("trajectory_replicas", Integer, json!(0)),
            ]);
            keys.extend(toy());
            keys.extend(grid());
            keys.extend(histogram());
            if kind == ExperimentKind::Escape {
                keys.extend([
                    key("zetas", NumberList, json!([0.5, 1.0])),
                    key("noise_variance", Number, json!(0.0)),
                    key("margin", Number, json!(0.2)),
                ]);
            } else {
                keys.push(key("zetas", NumberList, json!([0.5, 1.0, 2.0, 5.0, 10.0, 20.0])));
            }
        }
        ExperimentKind::Equivalence => {
            keys.extend([
                key("replicas", Integer, json!(1000)),
                key("steps", Integer, json!(100)),
                key("problem", Text, json!("toy_sine")),
                key("x0", Number, json!(100.0)),
                key("zeta", Number, json!(0.1)),
                key("gamma", OptNumber, Value::Null),
                key("grid_replicas", Integer, json!(100)),
                key("n", Integer, json!(360)),
                key("d", Integer, json!(64)),
                key("data_seed", Integer, json!(0)),
                key("data_path", OptText, Value::Null),
                key("smoothing", Text, json!("full_batch")),
                key("pass_threshold", Number, json!(0.97)),
            ]);
            keys.extend(toy());
            keys.extend(grid());
        }
        ExperimentKind::Convergence => {
            keys.extend([
                key("replicas", Integer, json!(1000)),
                key("steps", Integer, json!(5000)),
                key("zeta", Number, json!(3.0)),
                key("x0", Number, json!(20.0)),
                key("noise_variance", Number, json!(0.0)),
                key("epsilon", Number, json!(1.0)),
                key("theorem", Integer, json!(2)),
                key("gamma", OptNumber, Value::Null),
                key("m", OptNumber, Value::Null),
                key("delta", OptNumber, Value::Null),
                key("sigma2", OptNumber, Value::Null),
                key("m_prime", OptNumber, Value::Null),
                key("fit_points", Integer, json!(301)),
                key("fit_draws", Integer, json!(10_000)),
                key("fit_lo", Number, json!(-25.0)),
                key("fit_hi", Number, json!(25.0)),
                key("trajectory_replicas", Integer, json!(5)),
            ]);
            keys.extend(toy());
        }
        ExperimentKind::Constants => {
            keys.extend([
                key("problem", Text, json!("toy_sine")),
                key("alpha", Number, json!(1.0)),
                key("lambda", Number, json!(1.0)),
                key("dim", Integer, json!(2)),
                key("zetas", NumberList, json!([2.0, 3.0, 5.0])),
                key("noise_variance", Number, json!(0.0)),
                key("fit_points", Integer, json!(301)),
                key("fit_draws", Integer, json!(10_000)),
                key("fit_lo", Number, json!(-25.0)),
                key("fit_hi", Number, json!(25.0)),
            ]);
            keys.extend(toy());
        }
    }
    keys
}

fn type_ok(ty: KeyType, v: &Value) -> bool {
    match ty {
        KeyType::Number => v.as_f64().is_some_and(f64::is_finite),
        KeyType::Integer => v.as_u64().is_some(),
        KeyType::Text => v.is_string(),
        KeyType::NumberList => v
            .as_array()
            .is_some_and(|a| a.iter().all(|x| x.as_f64().is_some_and(f64::is_finite))),
        KeyType::OptNumber => v.is_null() || v.as_f64().is_some_and(f64::is_finite),
        KeyType::OptText => v.is_null() || v.is_string(),
    }
}

fn type_name(ty: KeyType) -> &'static str {
    match ty {
        KeyType::Number => "a finite number",
        KeyType::Integer => "a non-negative integer",
        KeyType::Text => "a string",
        KeyType::NumberList => "a list of finite numbers",
        KeyType::OptNumber => "a finite number or null",
        KeyType::OptText => "a string or null",
    }
}

/// A fully resolved configuration. Every read is logged so a run can be
/// checked against its manifest.
#[derive(Debug)]
pub struct ExperimentConfig {
    kind: ExperimentKind,
    values: BTreeMap<String, Value>,
    consumed: RefCell<BTreeSet<String>>,
}

impl Clone for ExperimentConfig {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            values: self.values.clone(),
            consumed: RefCell::new(BTreeSet::new()),
        }
    }
}

fn config_err(key: &str, reason: impl fmt::Display) -> LabError {
    LabError::Config(format!("{key}: {reason}"))
}

impl ExperimentConfig {
    /// All defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let values = key_specs(kind)
            .into_iter()
            .map(|k| (k.name.to_string(), k.default))
            .collect();
        Self {
            kind,
            values,
            consumed: RefCell::new(BTreeSet::new()),
        }
    }

    /// Defaults, then the JSON object `file`, then `overrides`. Unknown keys
    /// and ill-typed or out-of-range values are rejected by name.
    pub fn resolve(kind: ExperimentKind, file: Option<&Map<String, Value>>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut cfg = Self::defaults(kind);
        let specs = key_specs(kind);
        let mut apply = |k: &str, v: &Value| -> Result<()> {
            if k == "kind" {
                return match v.as_str() {
                    Some(s) if s == kind.name() => Ok(()),
                    _ => Err(config_err("kind", format!("does not match experiment '{kind}'"))),
                };
            }
            let spec = specs
                .iter()
                .find(|s| s.name == k)
                .ok_or_else(|| config_err(k, format!("unknown key for experiment '{kind}'")))?;
            if !type_ok(spec.ty, v) {
                return Err(config_err(k, format!("expected {}", type_name(spec.ty))));
            }
            cfg.values.insert(k.to_string(), v.clone());
            Ok(())
        };
        if let Some(map) = file {
            for (k, v) in map {
                apply(k, v)?;
            }
        }
        for (k, v) in overrides {
            apply(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a JSON object from `path` and resolves it.
    pub fn load(kind: ExperimentKind, path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| LabError::io(p, e))?;
                let value: Value = if text.trim().is_empty() {
                    Value::Object(Map::new())
                } else {
                    serde_json::from_str(&text)
                        .map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?
                };
                match value {
                    Value::Object(m) => Some(m),
                    _ => return Err(LabError::Config(format!("{}: expected a JSON object", p.display()))),
                }
            }
            None => None,
        };
        Self::resolve(kind, file.as_ref(), overrides)
    }

    fn validate(&self) -> Result<()> {
        let num = |k: &str| self.values.get(k).and_then(Value::as_f64);
        let int = |k: &str| self.values.get(k).and_then(Value::as_u64);
        let positive = ["replicas", "steps", "grid_count", "hist_bins", "fit_points", "fit_draws", "grid_replicas", "n", "d", "dim"];
        for k in positive {
            if int(k) == Some(0) {
                return Err(config_err(k, "must be at least 1"));
            }
        }
        for k in ["a", "lambda", "radius", "grid_lo", "grid_hi", "epsilon", "zeta"] {
            if let Some(v) = num(k) {
                if v <= 0.0 {
                    return Err(config_err(k, "must be positive"));
                }
            }
        }
        for k in ["noise_variance", "margin"] {
            if num(k).is_some_and(|v| v < 0.0) {
                return Err(config_err(k, "must be non-negative"));
            }
        }
        for k in ["gamma", "sigma2", "m_prime", "delta"] {
            if let Some(v) = num(k) {
                let ok = if k == "gamma" { v > 0.0 } else { v >= 0.0 };
                if !ok {
                    return Err(config_err(k, "out of range"));
                }
            }
        }
        if let Some(m) = num("m") {
            if !(0.0..1.0).contains(&m) {
                return Err(config_err("m", "must lie in [0, 1)"));
            }
        }
        if let Some(t) = int("theorem") {
            if !(1..=3).contains(&t) {
                return Err(config_err("theorem", "must be 1, 2 or 3"));
            }
        }
        if let Some(z) = self.values.get("zetas").and_then(Value::as_array) {
            if z.is_empty() || z.iter().any(|v| v.as_f64().is_some_and(|x| x < 0.0)) {
                return Err(config_err("zetas", "need at least one non-negative value"));
            }
        }
        if let Some(p) = num("pass_threshold") {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err("pass_threshold", "must lie in [0, 1]"));
            }
        }
        let ordered = [("x0_lo", "x0_hi"), ("hist_lo", "hist_hi"), ("grid_lo", "grid_hi"), ("fit_lo", "fit_hi")];
        for (lo, hi) in ordered {
            if let (Some(a), Some(b)) = (num(lo), num(hi)) {
                if a >= b {
                    return Err(config_err(lo, format!("must be below {hi}")));
                }
            }
        }
        let choices: [(&str, &[&str]); 3] = [
            ("grid_mode", &["log_centered", "endpoints"]),
            ("smoothing", &["full_batch", "pair"]),
            ("problem", match self.kind {
                ExperimentKind::Constants => &["toy_sine", "valley"],
                _ => &["toy_sine", "logistic"],
            }),
        ];
        for (k, allowed) in choices {
            if let Some(s) = self.values.get(k).and_then(Value::as_str) {
                if !allowed.contains(&s) {
                    return Err(config_err(k, format!("must be one of {allowed:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ExperimentKind {
        self.kind
    }

    /// Resolved key/value pairs, in key order.
    pub fn values(&self) -> &BTreeMap<String, Value> {
        &self.values
    }

    /// Keys read so far.
    pub fn consumed(&self) -> BTreeSet<String> {
        self.consumed.borrow().clone()
    }

    fn get(&self, k: &str) -> &Value {
        self.consumed.borrow_mut().insert(k.to_string());
        self.values
            .get(k)
            .unwrap_or_else(|| panic!("key '{k}' is not defined for {}", self.kind))
    }

    pub(crate) fn f64(&self, k: &str) -> f64 {
        self.get(k).as_f64().expect("validated number")
    }

    pub(crate) fn opt_f64(&self, k: &str) -> Option<f64> {
        self.get(k).as_f64()
    }

    pub(crate) fn u64(&self, k: &str) -> u64 {
        self.get(k).as_u64().expect("validated integer")
    }

    pub(crate) fn usize(&self, k: &str) -> usize {
        self.u64(k) as usize
    }

    pub(crate) fn str(&self, k: &str) -> &str {
        self.get(k).as_str().expect("validated string")
    }

    pub(crate) fn opt_str(&self, k: &str) -> Option<&str> {
        self.get(k).as_str()
    }

    pub(crate) fn f64_list(&self, k: &str) -> Vec<f64> {
        self.get(k)
            .as_array()
            .expect("validated list")
            .iter()
            .map(|v| v.as_f64().expect("validated number"))
            .collect()
    }
}
