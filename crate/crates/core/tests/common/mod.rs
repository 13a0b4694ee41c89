#![allow(dead_code)]

pub mod gradcheck;

use face4d::autograd::{Tape, Var};
use face4d::config::TrainingConfig;
use face4d::decoder::CrossAttention;
use face4d::geometry::Point3;
use face4d::nn::{Bound, ParamStore};
use face4d::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Norm-wise relative error between the tape gradient of `loss` and central
/// finite differences over every parameter scalar.
pub fn gradient_error<M>(
    model: &mut M,
    store: fn(&M) -> &ParamStore,
    store_mut: fn(&mut M) -> &mut ParamStore,
    loss: impl for<'t> Fn(&M, &'t Tape, &Bound<'t>) -> Var<'t>,
) -> f64 {
    let analytic: Vec<f64> = {
        let tape = Tape::new();
        let p = store(model).bind(&tape);
        let l = loss(model, &tape, &p);
        tape.grad(l, p.vars()).iter().flat_map(|g| g.value().data().to_vec()).collect()
    };
    let value = |m: &M| {
        let tape = Tape::new();
        let p = store(m).bind(&tape);
        loss(m, &tape, &p).item()
    };
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    let shapes: Vec<usize> = store(model).values().iter().map(Matrix::len).collect();
    for (i, n) in shapes.into_iter().enumerate() {
        for j in 0..n {
            let orig = store(model).values()[i].data()[j];
            store_mut(model).values_mut()[i].data_mut()[j] = orig + h;
            let up = value(model);
            store_mut(model).values_mut()[i].data_mut()[j] = orig - h;
            let down = value(model);
            store_mut(model).values_mut()[i].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    relative_error(&analytic, &numeric)
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * scale)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Short schedule for tests that exercise plumbing rather than convergence.
pub fn quick_config() -> TrainingConfig {
    let mut cfg = TrainingConfig::default();
    cfg.autoencoder.epochs = 60;
    cfg.schedule.level_steps = vec![8, 8, 8, 12];
    cfg.schedule.critic_steps = 2;
    cfg.decoder.epochs = 20;
    cfg
}

/// Scalar-loop oracle in 0.1 mm units.
pub fn brute_force_error(a: &[Vec<Point3>], b: &[Vec<Point3>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for t in 0..a.len() {
        for v in 0..a[t].len() {
            let dx = a[t][v][0] - b[t][v][0];
            let dy = a[t][v][1] - b[t][v][1];
            let dz = a[t][v][2] - b[t][v][2];
            sum += (dx * dx + dy * dy + dz * dz).sqrt();
            n += 1.0;
        }
    }
    10.0 * sum / n
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b[0].len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b[0].len() {
            for k in 0..b.len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Textbook multi-head attention with explicit loops and a max-shifted softmax.
pub fn brute_force_attention(store: &ParamStore, attn: &CrossAttention, q: &Matrix, k: &Matrix, v: &Matrix) -> Vec<Vec<f64>> {
    let d = attn.config.d_model;
    let h = attn.config.num_heads;
    let hd = d / h;
    let qp = mat_mul(&rows(q), &rows(store.get(attn.wq)));
    let kp = mat_mul(&rows(k), &rows(store.get(attn.wk)));
    let vp = mat_mul(&rows(v), &rows(store.get(attn.wv)));
    let mut concat = vec![vec![0.0; d]; q.rows()];
    for head in 0..h {
        let cols = head * hd..(head + 1) * hd;
        for i in 0..q.rows() {
            let scores: Vec<f64> = (0..k.rows())
                .map(|j| cols.clone().map(|c| qp[i][c] * kp[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in cols.clone() {
                concat[i][c] = (0..k.rows()).map(|j| exps[j] / z * vp[j][c]).sum();
            }
        }
    }
    mat_mul(&concat, &rows(store.get(attn.wo)))
}
