//! Flat `key = value` parameter documents.
//!
//! Every key has a typed default; a parameter file and `--set` overrides may
//! only name known keys. The resolved table is echoed into each manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use swapgame_core::htlcgame::{linspace, ParticipationBelief, SolverOptions, StopMassHorizon, SwapParams};
use swapgame_core::pricemodel::GbmParams;
use swapgame_core::quickswapgame::QuickSwapParams;
use swapgame_sim::cyclic::CyclicSpec;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Int(u64),
    List(Vec<f64>),
    Word(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Num(x) => write!(f, "{x}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::List(v) => {
                let parts: Vec<String> = v.iter().map(f64::to_string).collect();
                write!(f, "{}", parts.join(","))
            }
            Value::Word(w) => f.write_str(w),
        }
    }
}

enum Kind {
    Num,
    Int,
    List,
    Word(&'static [&'static str]),
}

struct Key {
    name: &'static str,
    kind: Kind,
    default: fn() -> Value,
}

macro_rules! key {
    ($name:literal, Num, $d:expr) => {
        Key { name: $name, kind: Kind::Num, default: || Value::Num($d) }
    };
    ($name:literal, Int, $d:expr) => {
        Key { name: $name, kind: Kind::Int, default: || Value::Int($d) }
    };
    ($name:literal, List, [$($d:expr),*]) => {
        Key { name: $name, kind: Kind::List, default: || Value::List(vec![$($d),*]) }
    };
    ($name:literal, Word($allowed:expr), $d:literal) => {
        Key { name: $name, kind: Kind::Word($allowed), default: || Value::Word($d.into()) }
    };
}

const BELIEFS: &[&str] = &["conditional", "literal"];
const HORIZONS: &[&str] = &["lock_time", "immediate"];

const KEYS: &[Key] = &[
    key!("x_a", Num, 2.0),
    key!("x_yb_t1", Num, 2.0),
    key!("t_a", Num, 48.0),
    key!("t_b", Num, 24.0),
    key!("tau_a", Num, 3.0),
    key!("tau_b", Num, 3.0),
    key!("t_eps", Num, 1.0),
    key!("eps", Num, 1.0),
    key!("sp_a", Num, 0.3),
    key!("sp_b", Num, 0.3),
    key!("r_a", Num, 0.005),
    key!("r_b", Num, 0.005),
    key!("f_a", Num, 0.0),
    key!("f_b", Num, 0.0),
    key!("theta_1", Num, 0.5),
    key!("theta_2", Num, 0.5),
    key!("mu", Num, 0.002),
    key!("sigma", Num, 0.1),
    key!("d", Num, 10.0),
    key!("delta", Num, 4.0),
    key!("rho", Num, 0.001),
    key!("rho_sweep", List, []),
    key!("xa_min", Num, 1.0),
    key!("xa_max", Num, 3.0),
    key!("xa_step", Num, 0.1),
    key!("t_min", Num, 0.0),
    key!("t_max", Num, 20.0),
    key!("t_step", Num, 1.0),
    key!("tp_min", Num, 0.0),
    key!("tp_max", Num, 21.0),
    key!("tp_step", Num, 1.0),
    key!("participation", Word(BELIEFS), "conditional"),
    key!("stop_mass", Word(HORIZONS), "lock_time"),
    key!("paths", Int, 100_000),
    key!("mc_htlc_xa", List, [2.0, 1.8, 2.2, 2.4, 1.6]),
    key!("mc_htlc_t", List, [0.0, 2.0, 5.0, 0.0, 10.0]),
    key!("mc_htlc_tp", List, [0.0, 3.0, 5.0, 8.0, 2.0]),
    key!("mc_quick_xa", List, [1.6, 1.8, 2.0, 2.2, 2.4]),
    key!("n", Int, 3),
    key!("amounts", List, []),
    key!("confirm_delays", List, []),
    key!("locktimes", List, []),
];

/// Resolved parameter table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Params(BTreeMap<&'static str, Value>);

impl Default for Params {
    fn default() -> Self {
        Self(KEYS.iter().map(|k| (k.name, (k.default)())).collect())
    }
}

fn parse_value(key: &Key, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    let num = |s: &str| -> Result<f64> {
        let x: f64 = s.trim().parse().with_context(|| format!("{}: '{s}' is not a number", key.name))?;
        if !x.is_finite() {
            bail!("{}: '{s}' is not finite", key.name);
        }
        Ok(x)
    };
    Ok(match key.kind {
        Kind::Num => Value::Num(num(raw)?),
        Kind::Int => Value::Int(raw.parse().with_context(|| format!("{}: '{raw}' is not a non-negative integer", key.name))?),
        Kind::List if raw.is_empty() => Value::List(Vec::new()),
        Kind::List => Value::List(raw.split(',').map(num).collect::<Result<_>>()?),
        Kind::Word(allowed) => {
            if !allowed.contains(&raw) {
                bail!("{}: '{raw}' is not one of {}", key.name, allowed.join(", "));
            }
            Value::Word(raw.to_owned())
        }
    })
}

impl Params {
    pub fn set(&mut self, name: &str, raw: &str) -> Result<()> {
        let key = KEYS.iter().find(|k| k.name == name).ok_or_else(|| anyhow!("unknown parameter '{name}'"))?;
        self.0.insert(key.name, parse_value(key, raw)?);
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, text: &str) -> Result<()> {
        let (k, v) = text.split_once('=').ok_or_else(|| anyhow!("expected key=value, got '{text}'"))?;
        self.set(k.trim(), v)
    }

    /// Applies a document of `key = value` lines; `#` starts a comment.
    pub fn apply_document(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut p = Self::default();
        p.apply_document(&text).with_context(|| format!("in {}", path.display()))?;
        Ok(p)
    }

    fn get(&self, name: &str) -> &Value {
        &self.0[name]
    }

    pub fn num(&self, name: &str) -> f64 {
        match self.get(name) {
            Value::Num(x) => *x,
            other => panic!("{name} holds {other:?}"),
        }
    }

    pub fn int(&self, name: &str) -> u64 {
        match self.get(name) {
            Value::Int(n) => *n,
            other => panic!("{name} holds {other:?}"),
        }
    }

    pub fn list(&self, name: &str) -> &[f64] {
        match self.get(name) {
            Value::List(v) => v,
            other => panic!("{name} holds {other:?}"),
        }
    }

    fn word(&self, name: &str) -> &str {
        match self.get(name) {
            Value::Word(w) => w,
            other => panic!("{name} holds {other:?}"),
        }
    }

    pub fn swap(&self) -> SwapParams {
        SwapParams {
            x_a: self.num("x_a"),
            x_yb_t1: self.num("x_yb_t1"),
            t_a: self.num("t_a"),
            t_b: self.num("t_b"),
            tau_a: self.num("tau_a"),
            tau_b: self.num("tau_b"),
            t_eps: self.num("t_eps"),
            eps: self.num("eps"),
            sp_a: self.num("sp_a"),
            sp_b: self.num("sp_b"),
            r_a: self.num("r_a"),
            r_b: self.num("r_b"),
            f_a: self.num("f_a"),
            f_b: self.num("f_b"),
            theta_1: self.num("theta_1"),
            theta_2: self.num("theta_2"),
            gbm: GbmParams { mu: self.num("mu"), sigma: self.num("sigma") },
        }
    }

    pub fn quick(&self) -> QuickSwapParams {
        QuickSwapParams { base: self.swap(), d: self.num("d"), delta: self.num("delta"), rho: self.num("rho") }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            participation: match self.word("participation") {
                "literal" => ParticipationBelief::Literal,
                _ => ParticipationBelief::Conditional,
            },
            stop_mass: match self.word("stop_mass") {
                "immediate" => StopMassHorizon::Immediate,
                _ => StopMassHorizon::LockTime,
            },
            ..SolverOptions::default()
        }
    }

    /// Premium rates to sweep: `rho_sweep`, or `rho` alone.
    pub fn rhos(&self) -> Vec<f64> {
        match self.list("rho_sweep") {
            [] => vec![self.num("rho")],
            v => v.to_vec(),
        }
    }

    /// Inclusive axis `min, min + step, ..., max`.
    pub fn axis(&self, prefix: &str) -> Result<Vec<f64>> {
        let (lo, hi, step) =
            (self.num(&format!("{prefix}_min")), self.num(&format!("{prefix}_max")), self.num(&format!("{prefix}_step")));
        if !(step > 0.0) || hi < lo {
            bail!("{prefix} axis needs {prefix}_step > 0 and {prefix}_max >= {prefix}_min");
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Ok(linspace(lo, lo + step * (count - 1) as f64, count))
    }

    /// Spot cells `(x_a, T, T')` of the HTLC Monte Carlo.
    pub fn htlc_cells(&self) -> Result<Vec<(f64, f64, f64)>> {
        let (xa, t, tp) = (self.list("mc_htlc_xa"), self.list("mc_htlc_t"), self.list("mc_htlc_tp"));
        if xa.len() != t.len() || xa.len() != tp.len() {
            bail!("mc_htlc_xa, mc_htlc_t and mc_htlc_tp must have equal lengths");
        }
        Ok(xa.iter().zip(t).zip(tp).map(|((&x, &t), &tp)| (x, t, tp)).collect())
    }

    /// The cyclic spec: uniform defaults for `n`, with any given lists and
    /// the shared `d`, `delta`, `rho`, `t_eps`.
    pub fn cyclic(&self) -> CyclicSpec {
        let n = self.int("n") as usize;
        let mut spec = CyclicSpec::uniform(n);
        for (name, field) in [
            ("amounts", &mut spec.amounts),
            ("confirm_delays", &mut spec.confirm_delays),
            ("locktimes", &mut spec.locktimes),
        ] {
            if !self.list(name).is_empty() {
                *field = self.list(name).to_vec();
            }
        }
        spec.d = self.num("d");
        spec.delta = self.num("delta");
        spec.rho = self.num("rho");
        spec.t_eps = self.num("t_eps");
        spec
    }
}
