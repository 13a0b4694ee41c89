//! Per-frame landmark autoencoder.
//!
//! Each K x 3 landmark displacement frame is flattened to 3K values, divided by
//! a data-derived scale, and passed through a fully connected encoder to a
//! `latent_dim` code. The decoder mirrors it back to K x 3 displacements in mm.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{self, frames_to_matrix, matrix_to_frames};
use crate::geometry::Point3;
use crate::nn::{grad_values, Activation, Adam, AdamConfig, Bound, Linear, ParamStore};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "autoencoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
    pub epochs: usize,
    /// Frames per optimizer step; 0 means full batch.
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 32,
            hidden: vec![64],
            activation: Activation::Tanh,
            lr: 2e-3,
            epochs: 200,
            batch_size: 0,
            rng_seed: 0,
        }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("autoencoder latent_dim must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("autoencoder hidden widths must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("autoencoder lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    pub code: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AeMeta {
    num_landmarks: usize,
    input_scale: f64,
    config: AeConfig,
}

#[derive(Debug, Clone)]
pub struct LandmarkAutoencoder {
    cfg: AeConfig,
    k: usize,
    input_scale: f64,
    store: ParamStore,
    encoder: Vec<Linear>,
    decoder: Vec<Linear>,
}

impl LandmarkAutoencoder {
    pub fn new(num_landmarks: usize, cfg: AeConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut store = ParamStore::new();
        let d_in = 3 * num_landmarks;

        let mut widths = vec![d_in];
        widths.extend(&cfg.hidden);
        widths.push(cfg.latent_dim);
        let encoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut store, &format!("enc{i}"), w[0], w[1], &mut rng))
            .collect();
        widths.reverse();
        let decoder = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&mut store, &format!("dec{i}"), w[0], w[1], &mut rng))
            .collect();

        Ok(Self { cfg, k: num_landmarks, input_scale: 1.0, store, encoder, decoder })
    }

    pub fn config(&self) -> &AeConfig {
        &self.cfg
    }

    pub fn num_landmarks(&self) -> usize {
        self.k
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.latent_dim
    }

    /// mm per unit of network input.
    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_input_scale(&mut self, scale: f64) {
        self.input_scale = scale;
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn run<'t>(&self, layers: &[Linear], p: &Bound<'t>, mut x: Var<'t>) -> Var<'t> {
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            x = layer.forward(p, x);
            if i != last {
                x = self.cfg.activation.apply(x);
            }
        }
        x
    }

    /// n x 3K scaled displacements -> n x latent_dim
    pub fn encode_var<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.run(&self.encoder, p, x)
    }

    /// n x latent_dim -> n x 3K scaled displacements
    pub fn decode_var<'t>(&self, p: &Bound<'t>, z: Var<'t>) -> Var<'t> {
        self.run(&self.decoder, p, z)
    }

    /// Mean-squared reconstruction error in scaled units.
    pub fn reconstruction_loss_var<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let recon = self.decode_var(p, self.encode_var(p, x));
        (recon - x).square().mean()
    }

    pub fn encode(&self, frame: &[Point3]) -> Result<LatentFrame> {
        features::check_points("landmark displacement frame", frame.len(), self.k)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let x = tape.leaf(frames_to_matrix(&[frame.to_vec()], self.input_scale));
        let z = self.encode_var(&p, x);
        Ok(LatentFrame { code: z.value().data().to_vec() })
    }

    pub fn decode(&self, code: &LatentFrame) -> Result<Vec<Point3>> {
        if code.code.len() != self.cfg.latent_dim {
            return Err(Error::Dimension(format!(
                "latent code has {} values, model expects {}",
                code.code.len(),
                self.cfg.latent_dim
            )));
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let z = tape.leaf(Matrix::new(1, code.code.len(), code.code.clone()));
        let x = self.decode_var(&p, z);
        Ok(matrix_to_frames(&x.value(), self.input_scale).remove(0))
    }

    /// Encodes a whole sequence of frames into a T x latent_dim matrix.
    pub fn encode_frames(&self, frames: &[Vec<Point3>]) -> Result<Matrix> {
        if let Some(f) = frames.iter().find(|f| f.len() != self.k) {
            features::check_points("landmark displacement frame", f.len(), self.k)?;
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let z = self.encode_var(&p, tape.leaf(frames_to_matrix(frames, self.input_scale)));
        let out = (*z.value()).clone();
        Ok(out)
    }

    /// Mean-squared reconstruction error in mm^2 over the given frames.
    pub fn reconstruction_mse(&self, frames: &[Vec<Point3>]) -> f64 {
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let x = tape.leaf(frames_to_matrix(frames, self.input_scale));
        self.reconstruction_loss_var(&p, x).item() * self.input_scale * self.input_scale
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = AeMeta { num_landmarks: self.k, input_scale: self.input_scale, config: self.cfg.clone() };
        Checkpoint::new(CHECKPOINT_KIND, &meta, self.store.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: AeMeta = ck.meta()?;
        let mut ae = Self::new(meta.num_landmarks, meta.config)?;
        ae.input_scale = meta.input_scale;
        ae.store.load_from(&ck.params).map_err(Error::Compatibility)?;
        Ok(ae)
    }
}

/// Trained autoencoder and its per-epoch mean-squared reconstruction loss (mm^2).
pub struct AeTraining {
    pub model: LandmarkAutoencoder,
    pub loss_curve: Vec<f64>,
}

/// Fits the autoencoder to landmark displacement frames with Adam on the MSE
/// objective. Fully determined by the frames and `cfg.rng_seed`.
pub fn train_autoencoder(frames: &[Vec<Point3>], cfg: &AeConfig) -> Result<AeTraining> {
    let first = frames.first().ok_or_else(|| Error::Usage("autoencoder training set is empty".into()))?;
    let k = first.len();
    if let Some(f) = frames.iter().find(|f| f.len() != k) {
        return Err(Error::Dimension(format!("training frames have {} and {} points", k, f.len())));
    }
    let mut model = LandmarkAutoencoder::new(k, cfg.clone())?;
    model.input_scale = features::rms_scale(frames);
    let data = frames_to_matrix(frames, model.input_scale);
    let scale2 = model.input_scale * model.input_scale;

    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x5eed_ae);
    let n = frames.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let rows = Matrix::from_fn(chunk.len(), data.cols(), |r, c| data.get(chunk[r], c));
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let loss = model.reconstruction_loss_var(&p, tape.leaf(rows));
            let grads = tape.grad(loss, p.vars());
            epoch_loss += loss.item() * chunk.len() as f64;
            opt.step(&mut model.store, &grad_values(&grads));
        }
        let mse = epoch_loss / n as f64 * scale2;
        if !mse.is_finite() {
            return Err(Error::Numeric("autoencoder loss became non-finite".into()));
        }
        curve.push(mse);
    }
    Ok(AeTraining { model, loss_curve: curve })
}
