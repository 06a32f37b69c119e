use std::collections::HashMap;

use rand::Rng;

use crate::graph::{Grads, Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named parameter tensors of one network. Iteration follows insertion
/// order everywhere (updates, checkpoints, checksums), which keeps runs
/// bit-reproducible.
#[derive(Clone, Debug)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, t: Tensor<T>) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), t));
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &self.entries[i].1
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<T> {
        let i = *self.index.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        &mut self.entries[i].1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn entry(&self, i: usize) -> (&str, &Tensor<T>) {
        let (n, t) = &self.entries[i];
        (n.as_str(), t)
    }

    pub fn entry_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn has_nan(&self) -> bool {
        self.entries.iter().any(|(_, t)| t.has_nan())
    }

    /// FNV-1a over names and element bits. Two sets collide only if they
    /// hold identical tensors under identical names, so equality of
    /// checksums before/after a phase certifies the phase left the set
    /// untouched.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (name, t) in &self.entries {
            for b in name.as_bytes() {
                eat(*b);
            }
            for v in t.data() {
                for b in v.as_f64().to_bits().to_le_bytes() {
                    eat(b);
                }
            }
        }
        h
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.add(n, t.cast());
        }
        out
    }
}

/// Parameter names resolved to graph nodes for one forward pass.
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

/// Copies a parameter set onto a tape. `trainable` decides whether the
/// leaves are `param` (receive gradients) or `constant` (frozen): this is
/// the single mechanism that routes each training phase's updates.
pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, trainable: bool) -> Bound {
    let mut vars = HashMap::new();
    for (name, t) in params.iter() {
        let v = if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        vars.insert(name.to_string(), v);
    }
    Bound { vars }
}

/// Extracts gradients aligned with `params` entry order (None where a
/// parameter did not participate in the loss).
pub fn grads_for<T: Scalar>(
    grads: &mut Grads<T>,
    bound: &Bound,
    params: &ParamSet<T>,
) -> Vec<Option<Tensor<T>>> {
    params.iter().map(|(n, _)| grads.take(bound.var(n))).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    /// Momentum settings commonly used for adversarial critics.
    pub fn adversarial(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }

    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

/// Adam with bias correction and optional global-norm gradient clipping.
/// Moment buffers stay aligned with the parameter set's entry order.
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, cfg: AdamConfig) -> Self {
        let m = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let v = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam { cfg, m, v, t: 0 }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update. Returns the pre-clip global gradient norm.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &[Option<Tensor<T>>],
        clip: Option<f64>,
    ) -> f64 {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count mismatch");
        let mut sq = 0.0f64;
        for g in grads.iter().flatten() {
            for &v in g.data() {
                let v = v.as_f64();
                sq += v * v;
            }
        }
        let norm = sq.sqrt();
        let scale = match clip {
            Some(c) if norm > c && norm > 0.0 => T::of(c / norm),
            _ => T::one(),
        };
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let bc1 = T::of(1.0 - self.cfg.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - self.cfg.beta2.powi(self.t as i32));
        let lr = T::of(self.cfg.lr);
        let eps = T::of(self.cfg.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.entry_mut(i);
            assert_eq!(g.shape(), p.shape(), "gradient shape mismatch at entry {i}");
            for (((pv, gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gc = *gv * scale;
                *mv = b1 * *mv + (T::one() - b1) * gc;
                *vv = b2 * *vv + (T::one() - b2) * gc * gc;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}

/// Kaiming fan-in normal init for conv weights `[cout, cin, k, k]`.
pub fn kaiming_conv<T: Scalar, R: Rng>(rng: &mut R, cout: usize, cin: usize, k: usize) -> Tensor<T> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    Tensor::randn(&[cout, cin, k, k], std, rng)
}

/// Init for transposed-conv weights `[cin, cout, k, k]`.
pub fn kaiming_convt<T: Scalar, R: Rng>(
    rng: &mut R,
    cin: usize,
    cout: usize,
    k: usize,
) -> Tensor<T> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    Tensor::randn(&[cin, cout, k, k], std, rng)
}

pub fn kaiming_linear<T: Scalar, R: Rng>(rng: &mut R, din: usize, dout: usize) -> Tensor<T> {
    let std = (2.0 / din as f64).sqrt();
    Tensor::randn(&[din, dout], std, rng)
}
