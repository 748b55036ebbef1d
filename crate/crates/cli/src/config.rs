//! Run configuration: embedded defaults, an optional JSON file on top,
//! then command-line flags and `key=value` overrides.

use std::fmt;
use std::path::Path;

use plapvisc::gallery;
use plapvisc::verify::Tolerances;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const DEFAULTS: &str = include_str!("defaults.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub entry: String,
    pub grid: GridSpec,
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    pub schedules: Schedules,
    pub trials: usize,
    pub truncate_fraction: f64,
    pub tolerances: ToleranceSpec,
    pub identity: IdentitySpec,
    pub singular: SingularSpec,
    pub bench: BenchSpec,
    pub seed: u64,
    pub out: String,
}

/// Nodes per axis over the box `[lo, hi]`; the box defaults to the gallery
/// entry's reference box and `dim` to the entry's dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: Option<usize>,
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub grad: f64,
    pub first_order: f64,
    pub second_order: f64,
    pub weak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySpec {
    pub entries: Vec<String>,
    pub triples: Vec<[f64; 3]>,
    pub points: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingularSpec {
    /// Random `(Du, D²u)` pairs held against the regularized lower bound;
    /// 0 skips that check.
    pub fatou_samples: usize,
    /// Gradient bound used when the entry has no Lipschitz constant.
    pub lip: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub sizes: Vec<usize>,
    pub q: Vec<f64>,
    pub eps: f64,
    /// The oracle is skipped above this many nodes.
    pub oracle_max_nodes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str(DEFAULTS).expect("embedded defaults parse")
    }
}

impl ToleranceSpec {
    pub fn to_core(self) -> Tolerances {
        Tolerances {
            grad: self.grad,
            first_order: self.first_order,
            second_order: self.second_order,
            weak: self.weak,
        }
    }
}

/// Where a bad value came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Origin {
    File { path: String, line: usize },
    Flag(String),
    Defaults,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub origin: Origin,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Origin::File { path, line } => write!(f, "{path}:{line}: {}", self.msg),
            Origin::Flag(flag) => write!(f, "{flag}: {}", self.msg),
            Origin::Defaults => write!(f, "defaults: {}", self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Command-line values layered over the file, in this order.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub eps: Option<f64>,
    pub pairs: Vec<String>,
}

struct Source {
    path: String,
    text: String,
}

impl Source {
    /// Line of the last segment of a dotted key path, found by locating
    /// each segment in turn after the previous one. 1-based.
    fn line_of(&self, path: &str) -> Option<usize> {
        let lines: Vec<&str> = self.text.lines().collect();
        let mut from = 0;
        let mut found = None;
        for seg in path.split('.').filter(|s| !s.is_empty() && !s.starts_with('[')) {
            let needle = format!("\"{seg}\"");
            let i = (from..lines.len()).find(|&i| lines[i].contains(&needle))?;
            found = Some(i + 1);
            from = i;
        }
        found
    }
}

/// Recursive object merge; anything else in `top` replaces `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), String> {
    let mut slot = tree;
    for part in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| format!("unknown key `{key}`"))?;
    }
    *slot = value;
    Ok(())
}

/// Loads and validates a configuration. `singular` requests the
/// admissibility check `q > p/(p-1)` for `p < 2`.
pub fn load(path: Option<&Path>, ov: &Overrides, singular: bool) -> Result<RunConfig, ConfigError> {
    let source = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
                origin: Origin::Flag("--config".into()),
                msg: format!("cannot read {}: {e}", p.display()),
            })?;
            Some(Source {
                path: p.display().to_string(),
                text,
            })
        }
        None => None,
    };
    let mut tree: Value = serde_json::from_str(DEFAULTS).expect("embedded defaults parse");
    if let Some(src) = &source {
        let user: Value = serde_json::from_str(&src.text).map_err(|e| ConfigError {
            origin: Origin::File {
                path: src.path.clone(),
                line: e.line(),
            },
            msg: e.to_string(),
        })?;
        if !user.is_object() {
            return Err(ConfigError {
                origin: Origin::File {
                    path: src.path.clone(),
                    line: 1,
                },
                msg: "config must be a JSON object".into(),
            });
        }
        merge(&mut tree, user);
    }

    // Command-line values, recorded so that errors can point at them.
    let mut flagged: Vec<(String, String)> = Vec::new();
    let flags = [
        ("out", ov.out.clone().map(Value::from)),
        ("seed", ov.seed.map(Value::from)),
        ("p", ov.p.map(Value::from)),
        ("q", ov.q.map(Value::from)),
        ("eps", ov.eps.map(Value::from)),
    ];
    for (key, v) in flags {
        if let Some(v) = v {
            set_path(&mut tree, key, v).expect("top-level key");
            flagged.push((key.to_string(), format!("--{key}")));
        }
    }
    for pair in &ov.pairs {
        let flag = format!("--override {pair}");
        let (key, raw) = pair.split_once('=').ok_or_else(|| ConfigError {
            origin: Origin::Flag(flag.clone()),
            msg: "expected key=value".into(),
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut tree, key, value).map_err(|msg| ConfigError {
            origin: Origin::Flag(flag.clone()),
            msg,
        })?;
        flagged.push((key.to_string(), flag));
    }

    let locate = |key: &str| -> Origin {
        if let Some((_, flag)) = flagged.iter().rev().find(|(k, _)| k == key) {
            return Origin::Flag(flag.clone());
        }
        match source.as_ref().and_then(|s| s.line_of(key).map(|l| (s, l))) {
            Some((src, line)) => Origin::File {
                path: src.path.clone(),
                line,
            },
            None => Origin::Defaults,
        }
    };
    let cfg: RunConfig = serde_path_to_error::deserialize(&tree).map_err(|e| {
        let key = e.path().to_string();
        ConfigError {
            origin: locate(&key),
            msg: format!("`{key}`: {}", e.inner()),
        }
    })?;
    validate(&cfg, singular).map_err(|(key, msg)| ConfigError {
        origin: locate(&key),
        msg,
    })?;
    Ok(cfg)
}

fn strictly_monotone(s: &[f64]) -> bool {
    !s.is_empty()
        && s.iter().all(|v| v.is_finite() && *v > 0.0)
        && (s.windows(2).all(|w| w[1] > w[0]) || s.windows(2).all(|w| w[1] < w[0]))
}

type Invalid = (String, String);

fn validate(cfg: &RunConfig, singular: bool) -> Result<(), Invalid> {
    let bad = |key: &str, msg: String| Err((key.to_string(), msg));
    if cfg.version != 1 {
        return bad("version", format!("unsupported config version {}", cfg.version));
    }
    let entry = match gallery::get(&cfg.entry) {
        Ok(e) => e,
        Err(e) => return bad("entry", e.to_string()),
    };
    if let Some(d) = cfg.grid.dim {
        if d != entry.dim {
            return bad("grid.dim", format!("entry {} is {}-dimensional, got dim = {d}", entry.name, entry.dim));
        }
    }
    for (key, b) in [("grid.lo", &cfg.grid.lo), ("grid.hi", &cfg.grid.hi)] {
        if let Some(b) = b {
            if b.len() != entry.dim {
                return bad(key, format!("expected {} bounds, got {}", entry.dim, b.len()));
            }
        }
    }
    if cfg.grid.n < 3 {
        return bad("grid.n", format!("need at least 3 nodes per axis, got {}", cfg.grid.n));
    }
    if !(cfg.p > 1.0 && cfg.p.is_finite()) {
        return bad("p", format!("need p > 1, got {}", cfg.p));
    }
    if !(cfg.q >= 2.0 && cfg.q.is_finite()) {
        return bad("q", format!("need q >= 2, got {}", cfg.q));
    }
    if singular && cfg.p < 2.0 {
        let dual = cfg.p / (cfg.p - 1.0);
        if cfg.q <= dual {
            return bad("q", format!("q = {} is not admissible for p = {}: need q > p/(p-1) = {dual}", cfg.q, cfg.p));
        }
    }
    if !(cfg.eps > 0.0 && cfg.eps.is_finite()) {
        return bad("eps", format!("need eps > 0, got {}", cfg.eps));
    }
    for (key, s) in [
        ("schedules.eps", &cfg.schedules.eps),
        ("schedules.delta", &cfg.schedules.delta),
        ("schedules.h", &cfg.schedules.h),
    ] {
        if !strictly_monotone(s) {
            return bad(key, format!("schedule must be positive and strictly monotone, got {s:?}"));
        }
    }
    if cfg.trials == 0 {
        return bad("trials", "need at least one trial".into());
    }
    if !(cfg.truncate_fraction > 0.0 && cfg.truncate_fraction <= 1.0) {
        return bad("truncate_fraction", format!("need 0 < fraction <= 1, got {}", cfg.truncate_fraction));
    }
    let t = &cfg.tolerances;
    for (key, v) in [("grad", t.grad), ("first_order", t.first_order), ("second_order", t.second_order), ("weak", t.weak)] {
        if !(v >= 0.0 && v.is_finite()) {
            return bad(&format!("tolerances.{key}"), format!("tolerance multiplier must be >= 0, got {v}"));
        }
    }
    for name in &cfg.identity.entries {
        if let Err(e) = gallery::get(name) {
            return bad("identity.entries", e.to_string());
        }
    }
    for tr in &cfg.identity.triples {
        if !(1.0 < tr[0] && tr[0] < tr[1] && tr[1] < tr[2] && tr[2].is_finite()) {
            return bad("identity.triples", format!("need 1 < lower < p < upper, got {tr:?}"));
        }
    }
    if cfg.bench.sizes.iter().any(|&n| n < 3) {
        return bad("bench.sizes", format!("sizes must be >= 3, got {:?}", cfg.bench.sizes));
    }
    if cfg.bench.q.iter().any(|&q| !(q >= 2.0 && q.is_finite())) {
        return bad("bench.q", format!("need q >= 2, got {:?}", cfg.bench.q));
    }
    if !(cfg.bench.eps > 0.0) {
        return bad("bench.eps", format!("need eps > 0, got {}", cfg.bench.eps));
    }
    if !(cfg.singular.lip > 0.0) {
        return bad("singular.lip", format!("need lip > 0, got {}", cfg.singular.lip));
    }
    Ok(())
}
