//! Parameter storage and transformer building blocks.
//!
//! Parameters live in a [`ParamStore`], an ordered map of named `f64`
//! matrices. A forward pass opens a [`Ctx`] over a tape and a store; layers
//! look parameters up by name, which is also how gradients and optimizer
//! moments stay associated with them.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashMap;

pub const LN_EPS: f64 = 1e-6;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Default)]
pub struct ParamStore {
    tensors: IndexMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn remove(&mut self, name: &str) -> Option<Array2<f64>> {
        self.tensors.shift_remove(name)
    }

    /// CRC of names, shapes and raw values, in sorted name order.
    /// Stable across runs; used by the frozen-teacher tests.
    pub fn checksum(&self) -> u32 {
        let mut names: Vec<&str> = self.names().collect();
        names.sort_unstable();
        let mut hasher = crc32fast::Hasher::new();
        for name in names {
            let t = &self.tensors[name];
            hasher.update(name.as_bytes());
            hasher.update(&(t.nrows() as u64).to_le_bytes());
            hasher.update(&(t.ncols() as u64).to_le_bytes());
            for v in t.iter() {
                hasher.update(&v.to_le_bytes());
            }
        }
        hasher.finalize()
    }

    /// Checksum restricted to names with the given prefix.
    pub fn checksum_prefix(&self, prefix: &str) -> u32 {
        let mut sub = ParamStore::new();
        for (name, t) in self.iter() {
            if name.starts_with(prefix) {
                sub.insert(name, t.clone());
            }
        }
        sub.checksum()
    }
}

/// Truncated normal (mean 0, resampled outside two standard deviations).
pub fn trunc_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| loop {
        let v = dist.sample(rng);
        if v.abs() <= 2.0 * std {
            break v;
        }
    })
}

pub fn init_linear(
    store: &mut ParamStore,
    prefix: &str,
    din: usize,
    dout: usize,
    rng: &mut ChaCha8Rng,
) {
    store.insert(format!("{prefix}.w"), trunc_normal(rng, din, dout, 0.02));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, dout)));
}

pub fn init_layer_norm(store: &mut ParamStore, prefix: &str, dim: usize) {
    store.insert(format!("{prefix}.g"), Array2::ones((1, dim)));
    store.insert(format!("{prefix}.b"), Array2::zeros((1, dim)));
}

/// Attention projections; queries come from `dq`, keys/values from `dkv`,
/// all mapped to the block width `c`.
pub fn init_attention(
    store: &mut ParamStore,
    prefix: &str,
    dq: usize,
    dkv: usize,
    c: usize,
    rng: &mut ChaCha8Rng,
) {
    init_linear(store, &format!("{prefix}.q"), dq, c, rng);
    init_linear(store, &format!("{prefix}.k"), dkv, c, rng);
    init_linear(store, &format!("{prefix}.v"), dkv, c, rng);
    init_linear(store, &format!("{prefix}.o"), c, c, rng);
}

pub fn init_block(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut ChaCha8Rng) {
    init_layer_norm(store, &format!("{prefix}.ln1"), c);
    init_attention(store, &format!("{prefix}.attn"), c, c, c, rng);
    init_layer_norm(store, &format!("{prefix}.ln2"), c);
    init_linear(store, &format!("{prefix}.mlp.fc1"), c, 4 * c, rng);
    init_linear(store, &format!("{prefix}.mlp.fc2"), 4 * c, c, rng);
}

/// Per-branch stochastic-depth decision, made by the caller per sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DropPath {
    Off,
    Dropped,
    /// Branch kept and scaled by `1 / (1 - rate)`.
    Kept(f64),
}

impl DropPath {
    pub fn draw(rate: f64, rng: &mut ChaCha8Rng) -> Self {
        if rate <= 0.0 {
            DropPath::Off
        } else if rng.gen::<f64>() < rate {
            DropPath::Dropped
        } else {
            DropPath::Kept(1.0 / (1.0 - rate))
        }
    }
}

/// Forward context: a tape plus the store parameters are read from.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    vars: HashMap<String, Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        Ctx {
            tape,
            store,
            vars: HashMap::new(),
        }
    }

    /// Var for a named parameter, registering it on the tape once.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(v) = self.vars.get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not found"))
            .clone();
        let v = self.tape.leaf(value);
        self.vars.insert(name.to_string(), v);
        v
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.store.contains(name)
    }

    /// Gradients for every parameter this context touched.
    pub fn param_grads(&self, grads: &crate::tape::Grads) -> IndexMap<String, Array2<f64>> {
        let mut out = IndexMap::new();
        let mut names: Vec<&String> = self.vars.keys().collect();
        names.sort();
        for name in names {
            if let Some(g) = grads.get(self.vars[name]) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let y = self.tape.matmul(x, w);
        self.tape.add_bias(y, b)
    }

    pub fn layer_norm(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.param(&format!("{prefix}.g"));
        let b = self.param(&format!("{prefix}.b"));
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    /// Multi-head attention. Queries from `xq`, keys/values from `xkv`;
    /// `mask` is added to every head's logits before the softmax.
    pub fn attention(
        &mut self,
        xq: Var,
        xkv: Var,
        prefix: &str,
        heads: usize,
        mask: Option<&Array2<f64>>,
    ) -> Var {
        let q = self.linear(xq, &format!("{prefix}.q"));
        let k = self.linear(xkv, &format!("{prefix}.k"));
        let v = self.linear(xkv, &format!("{prefix}.v"));
        let c = self.tape.value(q).ncols();
        assert!(c % heads == 0, "width {c} not divisible by {heads} heads");
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let nq = self.tape.value(q).nrows();
        let nk = self.tape.value(k).nrows();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.select_cols(q, h * d, d);
            let kh = self.tape.select_cols(k, h * d, d);
            let vh = self.tape.select_cols(v, h * d, d);
            let kt = self.tape.transpose(kh);
            let logits = self.tape.matmul(qh, kt);
            self.tape.count_attn((nq * nk) as u64);
            let logits = self.tape.scale(logits, scale);
            let logits = match mask {
                Some(m) => self.tape.add_const(logits, m),
                None => logits,
            };
            let p = self.tape.softmax_rows(logits);
            outs.push(self.tape.matmul(p, vh));
        }
        let joined = self.tape.concat_cols(&outs);
        self.linear(joined, &format!("{prefix}.o"))
    }

    pub fn mlp(&mut self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.fc1"));
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    fn residual(&mut self, x: Var, branch: Var, drop: DropPath) -> Var {
        match drop {
            DropPath::Off => self.tape.add(x, branch),
            DropPath::Dropped => x,
            DropPath::Kept(scale) => {
                let scaled = self.tape.scale(branch, scale);
                self.tape.add(x, scaled)
            }
        }
    }

    /// Pre-norm transformer block: attention then MLP, each behind a
    /// residual connection.
    pub fn block(
        &mut self,
        x: Var,
        prefix: &str,
        heads: usize,
        mask: Option<&Array2<f64>>,
        drop: DropPath,
    ) -> Var {
        let h = self.layer_norm(x, &format!("{prefix}.ln1"));
        let a = self.attention(h, h, prefix_join(prefix, "attn").as_str(), heads, mask);
        let x = self.residual(x, a, drop);
        let h = self.layer_norm(x, &format!("{prefix}.ln2"));
        let m = self.mlp(h, &format!("{prefix}.mlp"));
        self.residual(x, m, drop)
    }
}

fn prefix_join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

/// Additive key mask from a boolean "key is visible" slice: hidden keys get
/// a large negative logit for every query.
pub fn key_mask(nq: usize, visible: &[bool]) -> Array2<f64> {
    let mut m = Array2::zeros((nq, visible.len()));
    for ((_, j), v) in m.indexed_iter_mut() {
        if !visible[j] {
            *v = -1e30;
        }
    }
    m
}

/// Block-diagonal mask that restricts attention to tokens of the same group
/// (the per-frame attention pattern).
pub fn group_mask(groups: &[usize]) -> Array2<f64> {
    let n = groups.len();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if groups[i] != groups[j] {
                m[[i, j]] = -1e30;
            }
        }
    }
    m
}

/// Fails when any value in the store is non-finite; names the first offender.
pub fn check_finite(store: &ParamStore) -> Result<()> {
    for (name, t) in store.iter() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NanGradient {
                name: name.to_string(),
            });
        }
    }
    Ok(())
}
