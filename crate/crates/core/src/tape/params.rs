use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const CHECKPOINT_HEADER: &str = "lincomb-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Matrix,
    m: Matrix,
    v: Matrix,
}

/// Named trainable tensors plus Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

/// Tape handles for every parameter in a store.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} was not bound"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput(format!("bad parameter name {name:?}")));
    }
    Ok(())
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        check_name(name)?;
        if self.slots.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        let (r, c) = (value.rows(), value.cols());
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                m: Matrix::zeros(r, c),
                v: Matrix::zeros(r, c),
            },
        );
        Ok(())
    }

    /// Glorot-uniform weights with `fan_in = rows`, `fan_out = cols`.
    pub fn insert_glorot<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> Result<()> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let w = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit));
        self.insert(name, w)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Matrix::zeros(rows, cols))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.as_slice().len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Result<Bindings> {
        let mut vars = BTreeMap::new();
        for (name, slot) in &self.slots {
            vars.insert(name.clone(), tape.leaf(slot.value.clone())?);
        }
        Ok(Bindings { vars })
    }

    /// Collects per-parameter gradients after a backward pass.
    pub fn collect(&self, grads: &Gradients, bindings: &Bindings) -> BTreeMap<String, Matrix> {
        bindings
            .vars
            .iter()
            .map(|(name, &var)| (name.clone(), grads.get(var)))
            .collect()
    }

    fn checked<'a>(&self, grads: &'a BTreeMap<String, Matrix>) -> Result<Vec<(&'a String, &'a Matrix)>> {
        let mut out = Vec::new();
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("gradient for unknown parameter {name}")))?;
            if (g.rows(), g.cols()) != (slot.value.rows(), slot.value.cols()) {
                return Err(Error::ShapeMismatch(format!(
                    "gradient for {name} is {}x{}, parameter is {}x{}",
                    g.rows(),
                    g.cols(),
                    slot.value.rows(),
                    slot.value.cols()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient for {name}")));
            }
            out.push((name, g));
        }
        Ok(out)
    }

    /// Writes the text checkpoint format: a header line, then for each
    /// parameter a `name rows cols` line followed by one line of values.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
        writeln!(s, "params {}", self.slots.len()).unwrap();
        for (name, slot) in &self.slots {
            writeln!(s, "{name} {} {}", slot.value.rows(), slot.value.cols()).unwrap();
            let vals: Vec<String> = slot.value.as_slice().iter().map(|x| format!("{x:e}")).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing header"));
        }
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("missing parameter count"))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.next().ok_or_else(|| bad("truncated"))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(bad(&format!("bad parameter line {head:?}")));
            };
            let rows: usize = rows.parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = cols.parse().map_err(|_| bad("bad column count"))?;
            let vals = lines.next().ok_or_else(|| bad("truncated"))?;
            let data: Vec<f64> = vals
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(&format!("bad value in {name}")))?;
            if data.len() != rows * cols {
                return Err(bad(&format!("{name} has {} values, expected {}", data.len(), rows * cols)));
            }
            store.insert(name, Matrix::from_vec(rows, cols, data)?)?;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}

/// Plain gradient descent: `w -= lr * g`.
pub fn sgd_step(store: &mut ParamStore, grads: &BTreeMap<String, Matrix>, lr: f64) -> Result<()> {
    let checked = store.checked(grads)?;
    let updates: Vec<(String, Matrix)> = checked.into_iter().map(|(n, g)| (n.clone(), g.clone())).collect();
    for (name, g) in updates {
        let slot = store.slots.get_mut(&name).unwrap();
        for (w, d) in slot.value.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= lr * d;
        }
    }
    store.step += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(store: &mut ParamStore, grads: &BTreeMap<String, Matrix>, cfg: AdamConfig) -> Result<()> {
    let checked = store.checked(grads)?;
    let updates: Vec<(String, Matrix)> = checked.into_iter().map(|(n, g)| (n.clone(), g.clone())).collect();
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in updates {
        let slot = store.slots.get_mut(&name).unwrap();
        let n = g.as_slice().len();
        for k in 0..n {
            let gk = g.as_slice()[k];
            let m = &mut slot.m.as_mut_slice()[k];
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gk;
            let mk = *m;
            let v = &mut slot.v.as_mut_slice()[k];
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gk * gk;
            let vk = *v;
            slot.value.as_mut_slice()[k] -= cfg.lr * (mk / c1) / ((vk / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
