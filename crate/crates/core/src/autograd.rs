//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! Every node's value is computed eagerly when the node is created. Gradients
//! are themselves built out of tape nodes, so [`Tape::grad`] can be applied to
//! its own output. The gradient penalty relies on this: it differentiates the
//! norm of an input gradient with respect to the critic parameters.
//!
//! Node ids grow monotonically, so the creation order is a topological order.

use std::cell::RefCell;
use std::ops;
use std::rc::Rc;

use crate::tensor::Matrix;

/// Sentinel index meaning "no source element" (reads as zero in a gather).
pub const NONE: u32 = u32::MAX;

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    /// out.flat[i] = src.flat[index[i]] (or 0 for NONE)
    Gather { src: usize, index: Rc<[u32]> },
    /// out.flat[index[i]] += src.flat[i]
    Scatter { src: usize, index: Rc<[u32]> },
    /// Elementwise product with a constant mask.
    Mask(usize, Rc<Matrix>),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Recip(usize),
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => [Some(a), Some(b)],
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Mask(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::Recip(a) => [Some(a), None],
            Op::Gather { src, .. } | Op::Scatter { src, .. } => [Some(src), None],
        }
    }
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub fn leaf(&self, value: Matrix) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.leaf(value)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Matrix::scalar(value))
    }

    /// Gradients of `output` with respect to each of `wrt`.
    ///
    /// `output` is seeded with ones, so for a non-scalar output this is the
    /// gradient of the sum of its entries. The returned vars live on this tape
    /// and may be differentiated again.
    pub fn grad<'t>(&'t self, output: Var<'t>, wrt: &[Var<'t>]) -> Vec<Var<'t>> {
        let n = output.id + 1;
        let mut needs = vec![false; n];
        for w in wrt {
            if w.id < n {
                needs[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for id in 0..n {
                if !needs[id] {
                    needs[id] = nodes[id].op.inputs().iter().flatten().any(|&i| needs[i]);
                }
            }
        }

        let mut grads: Vec<Option<Var<'t>>> = vec![None; n];
        if needs[output.id] {
            let shape = output.shape();
            grads[output.id] = Some(self.leaf(Matrix::filled(shape.0, shape.1, 1.0)));
        }

        for id in (0..n).rev() {
            let Some(g) = grads[id] else { continue };
            if !needs[id] {
                continue;
            }
            let op = self.nodes.borrow()[id].op.clone();
            let this = Var { tape: self, id };
            for (input, contrib) in self.backward(&op, this, g) {
                if !needs[input] {
                    continue;
                }
                grads[input] = Some(match grads[input] {
                    Some(acc) => acc + contrib,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = w.shape();
                    self.leaf(Matrix::zeros(r, c))
                }
            })
            .collect()
    }

    fn backward<'t>(&'t self, op: &Op, this: Var<'t>, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
        let var = |id| Var { tape: self, id };
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (va, vb) = (var(a), var(b));
                vec![(a, g.matmul(vb.t())), (b, va.t().matmul(g))]
            }
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, -g)],
            Op::Mul(a, b) => vec![(a, g * var(b)), (b, g * var(a))],
            Op::Scale(a, s) => vec![(a, g * s)],
            Op::Shift(a) => vec![(a, g)],
            Op::Gather { src, ref index } => {
                let (r, c) = var(src).shape();
                vec![(src, g.scatter(Rc::clone(index), r, c))]
            }
            Op::Scatter { src, ref index } => {
                let (r, c) = var(src).shape();
                vec![(src, g.gather(Rc::clone(index), r, c))]
            }
            Op::Mask(a, ref m) => vec![(a, g.mask(Rc::clone(m)))],
            Op::Tanh(a) => vec![(a, g * (-(this * this)).shift(1.0))],
            Op::Sigmoid(a) => vec![(a, g * this * (-this).shift(1.0))],
            Op::Exp(a) => vec![(a, g * this)],
            Op::Ln(a) => vec![(a, g * var(a).recip())],
            Op::Sqrt(a) => vec![(a, g * this.recip() * 0.5)],
            Op::Recip(a) => vec![(a, g * -(this * this))],
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Matrix> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    /// Value of a 1x1 var.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// A leaf holding the same value, cut off from this var's history.
    pub fn detach(&self) -> Var<'t> {
        self.tape.leaf((*self.value()).clone())
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value());
        self.tape.push(v, Op::MatMul(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn shift(self, s: f64) -> Var<'t> {
        self.unary(Op::Shift(self.id), |x| x + s)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn recip(self) -> Var<'t> {
        self.unary(Op::Recip(self.id), |x| 1.0 / x)
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn mask(self, mask: Rc<Matrix>) -> Var<'t> {
        let v = self.value().zip_map(&mask, |x, m| x * m);
        self.tape.push(v, Op::Mask(self.id, mask))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let m = self.value().map(|x| if x > 0.0 { 1.0 } else { slope });
        self.mask(Rc::new(m))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the clamp is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let value = self.value();
        let clipped = value.map(|x| x.clamp(lo, hi));
        let m = value.map(|x| if x < lo || x > hi { 0.0 } else { 1.0 });
        // x*m + (clamped constant where the mask is off)
        let rest = clipped.zip_map(&m, |c, mk| if mk == 0.0 { c } else { 0.0 });
        let masked = self.mask(Rc::new(m));
        masked + self.tape.leaf(rest)
    }

    pub fn gather(self, index: Rc<[u32]>, rows: usize, cols: usize) -> Var<'t> {
        assert_eq!(index.len(), rows * cols, "gather index length mismatch");
        let src = self.value();
        let data = src.data();
        let out: Vec<f64> = index
            .iter()
            .map(|&i| if i == NONE { 0.0 } else { data[i as usize] })
            .collect();
        self.tape.push(Matrix::new(rows, cols, out), Op::Gather { src: self.id, index })
    }

    pub fn scatter(self, index: Rc<[u32]>, rows: usize, cols: usize) -> Var<'t> {
        let src = self.value();
        assert_eq!(index.len(), src.len(), "scatter index length mismatch");
        let mut out = vec![0.0; rows * cols];
        for (&i, &x) in index.iter().zip(src.data()) {
            if i != NONE {
                out[i as usize] += x;
            }
        }
        self.tape.push(Matrix::new(rows, cols, out), Op::Scatter { src: self.id, index })
    }

    pub fn t(self) -> Var<'t> {
        let (r, c) = self.shape();
        let index: Vec<u32> = (0..c).flat_map(|i| (0..r).map(move |j| (j * c + i) as u32)).collect();
        self.gather(index.into(), c, r)
    }

    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r * c, rows * cols, "reshape size mismatch");
        if (r, c) == (rows, cols) {
            return self;
        }
        let index: Vec<u32> = (0..(r * c) as u32).collect();
        self.gather(index.into(), rows, cols)
    }

    /// Sum of all entries, as a 1x1 var.
    pub fn sum(self) -> Var<'t> {
        let n = self.value().len();
        self.scatter(vec![0u32; n].into(), 1, 1)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Column sums: r x c -> 1 x c.
    pub fn sum_rows(self) -> Var<'t> {
        let (r, c) = self.shape();
        let index: Vec<u32> = (0..r).flat_map(|_| 0..c as u32).collect();
        self.scatter(index.into(), 1, c)
    }

    /// Row sums: r x c -> r x 1.
    pub fn sum_cols(self) -> Var<'t> {
        let (r, c) = self.shape();
        let index: Vec<u32> = (0..r as u32).flat_map(|i| std::iter::repeat_n(i, c)).collect();
        self.scatter(index.into(), r, 1)
    }

    /// Mean over rows: r x c -> 1 x c.
    pub fn mean_rows(self) -> Var<'t> {
        let r = self.shape().0 as f64;
        self.sum_rows().scale(1.0 / r)
    }

    /// Repeat a 1 x c row n times.
    pub fn broadcast_rows(self, n: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r, 1, "broadcast_rows expects a single row");
        let index: Vec<u32> = (0..n).flat_map(|_| 0..c as u32).collect();
        self.gather(index.into(), n, c)
    }

    /// Repeat an r x 1 column n times.
    pub fn broadcast_cols(self, n: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(c, 1, "broadcast_cols expects a single column");
        let index: Vec<u32> = (0..r as u32).flat_map(|i| std::iter::repeat_n(i, n)).collect();
        self.gather(index.into(), r, n)
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(start + len <= r, "row slice out of range");
        let index: Vec<u32> = ((start * c) as u32..((start + len) * c) as u32).collect();
        self.gather(index.into(), len, c)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Var<'t> {
        let (r, c) = self.shape();
        assert!(start + len <= c, "column slice out of range");
        let index: Vec<u32> =
            (0..r).flat_map(|i| (start..start + len).map(move |j| (i * c + j) as u32)).collect();
        self.gather(index.into(), r, len)
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = parts[0].shape().0;
        let total: usize = parts.iter().map(|p| p.shape().1).sum();
        let mut offset = 0;
        let mut acc: Option<Var<'t>> = None;
        for p in parts {
            let (r, c) = p.shape();
            assert_eq!(r, rows, "concat_cols row mismatch");
            let index: Vec<u32> =
                (0..r).flat_map(|i| (0..c).map(move |j| (i * total + offset + j) as u32)).collect();
            let placed = p.scatter(index.into(), rows, total);
            acc = Some(match acc {
                Some(a) => a + placed,
                None => placed,
            });
            offset += c;
        }
        acc.unwrap()
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = parts[0].shape().1;
        let total: usize = parts.iter().map(|p| p.shape().0).sum();
        let mut offset = 0;
        let mut acc: Option<Var<'t>> = None;
        for p in parts {
            let (r, c) = p.shape();
            assert_eq!(c, cols, "concat_rows column mismatch");
            let index: Vec<u32> = ((offset * cols) as u32..((offset + r) * cols) as u32).collect();
            let placed = p.scatter(index.into(), total, cols);
            acc = Some(match acc {
                Some(a) => a + placed,
                None => placed,
            });
            offset += r;
        }
        acc.unwrap()
    }

    /// Row-wise softmax. The row maximum is subtracted as a constant, which
    /// leaves both the value and the gradient unchanged.
    pub fn softmax_rows(self) -> Var<'t> {
        let v = self.value();
        let (r, c) = v.shape();
        let offsets = Matrix::from_fn(r, c, |i, _| {
            -v.row(i).iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
        });
        let e = (self + self.tape.leaf(offsets)).exp();
        let denom = e.sum_cols().recip().broadcast_cols(c);
        e * denom
    }

    /// Same-padded temporal window: T x C -> T x (k*C), zero outside the sequence.
    /// Column block j holds the frame at offset j - k/2.
    pub fn unfold_time(self, k: usize) -> Var<'t> {
        let (t, c) = self.shape();
        let half = (k / 2) as isize;
        let mut index = Vec::with_capacity(t * k * c);
        for row in 0..t as isize {
            for j in 0..k as isize {
                let src = row + j - half;
                for ch in 0..c {
                    if src < 0 || src >= t as isize {
                        index.push(NONE);
                    } else {
                        index.push((src as usize * c + ch) as u32);
                    }
                }
            }
        }
        self.gather(index.into(), t, k * c)
    }
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&rhs.value(), |a, b| a + b);
        self.tape.push(v, Op::Add(self.id, rhs.id))
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&rhs.value(), |a, b| a - b);
        self.tape.push(v, Op::Sub(self.id, rhs.id))
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value().zip_map(&rhs.value(), |a, b| a * b);
        self.tape.push(v, Op::Mul(self.id, rhs.id))
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&Matrix) -> f64, at: &Matrix, h: f64) -> Matrix {
        let mut out = Matrix::zeros(at.rows(), at.cols());
        for i in 0..at.len() {
            let mut p = at.clone();
            p.data_mut()[i] += h;
            let mut m = at.clone();
            m.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&p) - f(&m)) / (2.0 * h);
        }
        out
    }

    fn sample(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        let diff = a.zip_map(b, |x, y| x - y).norm();
        diff / a.norm().max(b.norm()).max(1e-12)
    }

    #[test]
    fn first_order_gradients_match_finite_differences() {
        let x0 = sample(3, 4, 1);
        let w0 = sample(4, 2, 2);
        let f = |x: &Matrix, w: &Matrix| -> (f64, Option<(Matrix, Matrix)>) {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let h = xv.matmul(wv).tanh();
            let s = h.softmax_rows().sigmoid().square().ln().sum() + h.unfold_time(3).exp().mean();
            let g = tape.grad(s, &[xv, wv]);
            (s.item(), Some(((*g[0].value()).clone(), (*g[1].value()).clone())))
        };
        let (_, grads) = f(&x0, &w0);
        let (gx, gw) = grads.unwrap();
        let nx = finite_diff(|x| f(x, &w0).0, &x0, 1e-6);
        let nw = finite_diff(|w| f(&x0, w).0, &w0, 1e-6);
        assert!(rel_err(&gx, &nx) < 1e-6, "{gx:?} vs {nx:?}");
        assert!(rel_err(&gw, &nw) < 1e-6);
    }

    #[test]
    fn second_order_gradient_of_gradient_norm() {
        // d/dw of ||d f / dx||^2 where f = sum(tanh(x w))
        let x0 = sample(2, 3, 5);
        let w0 = sample(3, 2, 6);
        let penalty = |w: &Matrix| -> (f64, Matrix) {
            let tape = Tape::new();
            let xv = tape.leaf(x0.clone());
            let wv = tape.leaf(w.clone());
            let f = xv.matmul(wv).tanh().sum();
            let gx = tape.grad(f, &[xv])[0];
            let p = (gx.square().sum().shift(1e-16).sqrt().shift(-1.0)).square();
            let gw = tape.grad(p, &[wv])[0];
            (p.item(), (*gw.value()).clone())
        };
        let (_, analytic) = penalty(&w0);
        let numeric = finite_diff(|w| penalty(w).0, &w0, 1e-6);
        assert!(rel_err(&analytic, &numeric) < 1e-6, "{analytic:?} vs {numeric:?}");
    }

    #[test]
    fn structural_ops_round_trip() {
        let tape = Tape::new();
        let x = tape.leaf(sample(3, 2, 9));
        let y = x.t().t();
        assert_eq!(*y.value(), *x.value());
        let parts = [x.slice_cols(0, 1), x.slice_cols(1, 1)];
        assert_eq!(*Var::concat_cols(&parts).value(), *x.value());
        let rows = [x.slice_rows(0, 2), x.slice_rows(2, 1)];
        assert_eq!(*Var::concat_rows(&rows).value(), *x.value());
    }

    #[test]
    fn clamp_passes_values_and_blocks_gradient_when_active() {
        let tape = Tape::new();
        let x = tape.leaf(Matrix::new(1, 3, vec![-1.0, 0.5, 2.0]));
        let y = x.clamp(0.0, 1.0);
        assert_eq!(y.value().data(), &[0.0, 0.5, 1.0]);
        let g = tape.grad(y.sum(), &[x])[0];
        assert_eq!(g.value().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn unreachable_wrt_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Matrix::filled(2, 2, 1.0));
        let b = tape.leaf(Matrix::filled(2, 3, 1.0));
        let g = tape.grad(a.sum(), &[b])[0];
        assert_eq!(*g.value(), Matrix::zeros(2, 3));
    }
}
