//! Tape gradients against central finite differences at toy sizes
//! (T = 4, K = 5, V = 12, 8 channels). Smooth activations throughout so the
//! differences are well defined. Each case returns the norm-wise relative error.

use face4d::autoencoder::{AeConfig, LandmarkAutoencoder};
use face4d::decoder::{batch_loss, AttentionConfig, DecoderConfig, DisplacementDecoder, FrameSample};
use face4d::discriminators::{
    gradient_penalty, loss_coh, loss_iden, wasserstein_term, ConditionalDiscConfig, CriticConfig, Discriminators,
};
use face4d::geometry::LandmarkFrame;
use face4d::nn::{Activation, ParamStore};
use face4d::tensor::Matrix;
use rand::Rng;

const T: usize = 4;
const K: usize = 5;
const V: usize = 12;

fn nets() -> Discriminators {
    let c = CriticConfig { channels: 8, kernel_size: 3, activation: Activation::Tanh, ..Default::default() };
    let d = ConditionalDiscConfig {
        channels: 8,
        kernel_size: 3,
        condition_dim: 4,
        activation: Activation::Tanh,
        ..Default::default()
    };
    Discriminators::new(K, c, d.clone(), d, 21).unwrap()
}

fn batch(seed: u64, n: usize) -> Vec<Matrix> {
    let mut rng = super::rng(seed);
    (0..n).map(|_| super::random_matrix(&mut rng, T, 3 * K, 1.0)).collect()
}

fn disc_store(d: &Discriminators) -> &ParamStore {
    d.params()
}

fn disc_store_mut(d: &mut Discriminators) -> &mut ParamStore {
    d.params_mut()
}

pub fn autoencoder_reconstruction() -> f64 {
    let cfg = AeConfig { latent_dim: 4, hidden: vec![8], ..Default::default() };
    let mut ae = LandmarkAutoencoder::new(K, cfg).unwrap();
    let x = batch(1, 1).remove(0);
    super::gradient_error(&mut ae, LandmarkAutoencoder::params, LandmarkAutoencoder::params_mut, |m, tape, p| {
        m.reconstruction_loss_var(p, tape.constant(x.clone()))
    })
}

pub fn identity_loss() -> f64 {
    let mut d = nets();
    let (real, fake) = (batch(2, 2), batch(3, 2));
    let mut rng = super::rng(4);
    let nf: Vec<Matrix> = (0..2).map(|_| super::random_matrix(&mut rng, 1, 3 * K, 1.0)).collect();
    super::gradient_error(&mut d, disc_store, disc_store_mut, |d, tape, p| {
        let pair = |s: &Matrix, n: &Matrix| (tape.constant(s.clone()), tape.constant(n.clone()));
        let r: Vec<_> = real.iter().zip(&nf).map(|(s, n)| pair(s, n)).collect();
        let f: Vec<_> = fake.iter().zip(nf.iter().rev()).map(|(s, n)| pair(s, n)).collect();
        loss_iden(&d.identity, p, &r, &f).unwrap()
    })
}

pub fn coherence_loss() -> f64 {
    let mut d = nets();
    let (real, fake) = (batch(5, 2), batch(6, 2));
    super::gradient_error(&mut d, disc_store, disc_store_mut, |d, tape, p| {
        let r: Vec<_> = real.iter().map(|m| tape.constant(m.clone())).collect();
        let f: Vec<_> = fake.iter().map(|m| tape.constant(m.clone())).collect();
        loss_coh(&d.coherence, p, &r, &f).unwrap()
    })
}

pub fn wasserstein_term_of_critic() -> f64 {
    let mut d = nets();
    let (real, fake) = (batch(7, 2), batch(8, 2));
    super::gradient_error(&mut d, disc_store, disc_store_mut, |d, tape, p| {
        let score = |m: &Matrix| d.critic.score_var(p, tape.constant(m.clone())).unwrap();
        let r: Vec<_> = real.iter().map(score).collect();
        let f: Vec<_> = fake.iter().map(score).collect();
        wasserstein_term(&r, &f).unwrap()
    })
}

pub fn gradient_penalty_of_critic() -> f64 {
    let mut d = nets();
    let (real, fake) = (batch(9, 2), batch(10, 2));
    super::gradient_error(&mut d, disc_store, disc_store_mut, |d, tape, p| {
        let r: Vec<_> = real.iter().map(|m| tape.constant(m.clone())).collect();
        let f: Vec<_> = fake.iter().map(|m| tape.constant(m.clone())).collect();
        let mut rng = super::rng(99);
        gradient_penalty(|x| d.critic.score_var(p, x), &r, &f, &mut rng).unwrap()
    })
}

fn frames(rng: &mut rand_chacha::ChaCha8Rng, n: usize, scale: f64) -> Vec<[f64; 3]> {
    (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0) * scale)).collect()
}

pub fn decoder_mse() -> f64 {
    let cfg = DecoderConfig {
        attention: AttentionConfig { d_model: 8, num_heads: 2 },
        hidden: vec![8],
        ..Default::default()
    };
    let mut model = DisplacementDecoder::new(K, V, cfg).unwrap();
    let mut rng = super::rng(12);
    let neutrals: Vec<LandmarkFrame> = (0..2).map(|_| LandmarkFrame::new(frames(&mut rng, K, 50.0)).unwrap()).collect();
    let samples: Vec<FrameSample> = (0..T)
        .map(|t| FrameSample {
            identity: format!("id{}", t % 2),
            neutral: neutrals[t % 2].clone(),
            lm_disp: frames(&mut rng, K, 1.0),
            mesh_disp: frames(&mut rng, V, 1.0),
        })
        .collect();
    super::gradient_error(&mut model, DisplacementDecoder::params, DisplacementDecoder::params_mut, |m, _, p| {
        let refs: Vec<&FrameSample> = samples.iter().collect();
        batch_loss(m, p, &refs).unwrap()
    })
}

pub const CASES: &[(&str, fn() -> f64)] = &[
    ("autoencoder reconstruction", autoencoder_reconstruction),
    ("identity loss", identity_loss),
    ("coherence loss", coherence_loss),
    ("wasserstein term", wasserstein_term_of_critic),
    ("gradient penalty", gradient_penalty_of_critic),
    ("decoder mse", decoder_mse),
];
