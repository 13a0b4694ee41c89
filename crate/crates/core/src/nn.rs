//! Parameter storage, layers and the Adam optimizer.

use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter matrices of one network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Place every parameter on the tape as a leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound { vars: self.values.iter().map(|m| tape.leaf(m.clone())).collect() }
    }

    /// Order-sensitive FNV-1a digest of the exact parameter bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, m) in self.names.iter().zip(&self.values) {
            eat(name.as_bytes());
            eat(&(m.rows() as u64).to_le_bytes());
            eat(&(m.cols() as u64).to_le_bytes());
            for x in m.data() {
                eat(&x.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Copy values from `other` where names and shapes agree; the layout must match exactly.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if self.names != other.names {
            return Err(format!(
                "parameter layout differs: expected {:?}, found {:?}",
                self.names, other.names
            ));
        }
        for (i, (mine, theirs)) in self.values.iter_mut().zip(&other.values).enumerate() {
            if mine.shape() != theirs.shape() {
                return Err(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    mine.shape(),
                    theirs.shape()
                ));
            }
            *mine = theirs.clone();
        }
        Ok(())
    }
}

/// Parameters of a [`ParamStore`] placed on a tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

impl<'t> Index<ParamId> for Bound<'t> {
    type Output = Var<'t>;
    fn index(&self, id: ParamId) -> &Var<'t> {
        &self.vars[id.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    LeakyRelu,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu => x.leaky_relu(0.2),
        }
    }
}

/// Uniform Glorot initialization.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..a))
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let w = store.add(format!("{name}.w"), glorot(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Self { w, b, fan_in, fan_out }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Matrix::zeros(fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, fan_out));
        Self { w, b, fan_in, fan_out }
    }

    /// n x fan_in -> n x fan_out
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let n = x.shape().0;
        x.matmul(p[self.w]) + p[self.b].broadcast_rows(n)
    }
}

/// Same-padded 1D convolution over the time (row) axis.
#[derive(Debug, Clone, Copy)]
pub struct TemporalConv {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl TemporalConv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "temporal kernel must be odd");
        let w = store.add(format!("{name}.w"), glorot(rng, kernel * c_in, c_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, c_out));
        Self { w, b, kernel, c_in, c_out }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "temporal kernel must be odd");
        let w = store.add(format!("{name}.w"), Matrix::zeros(kernel * c_in, c_out));
        let b = store.add(format!("{name}.b"), Matrix::zeros(1, c_out));
        Self { w, b, kernel, c_in, c_out }
    }

    /// T x c_in -> T x c_out
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let t = x.shape().0;
        x.unfold_time(self.kernel).matmul(p[self.w]) + p[self.b].broadcast_rows(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.values().iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix]) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, param) in store.values_mut().iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, p) in param.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Values of gradient vars as owned matrices.
pub fn grad_values(grads: &[Var<'_>]) -> Vec<Matrix> {
    grads.iter().map(|g| (*g.value()).clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Matrix::new(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &store);
        for _ in 0..500 {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let loss = p[id].square().sum();
            let g = tape.grad(loss, p.vars());
            opt.step(&mut store, &grad_values(&g));
        }
        assert!(store.get(id).max_abs() < 1e-2);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let conv = TemporalConv::new(&mut store, "c", 2, 3, 3, &mut rng);
        let x = Matrix::from_fn(5, 2, |r, c| (r * 2 + c) as f64 * 0.1 - 0.3);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let y = conv.forward(&p, tape.leaf(x.clone()));
        let w = store.get(conv.w);
        for t in 0..5 {
            for o in 0..3 {
                let mut s = 0.0;
                for j in 0..3 {
                    let src = t as isize + j as isize - 1;
                    if !(0..5).contains(&src) {
                        continue;
                    }
                    for c in 0..2 {
                        s += x.get(src as usize, c) * w.get(j * 2 + c, o);
                    }
                }
                assert!((y.value().get(t, o) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checksum_detects_single_bit_changes() {
        let mut store = ParamStore::new();
        let id = store.add("a", Matrix::filled(2, 2, 1.0));
        let before = store.checksum();
        store.get_mut(id).data_mut()[3] = f64::from_bits(1.0f64.to_bits() + 1);
        assert_ne!(before, store.checksum());
    }
}
