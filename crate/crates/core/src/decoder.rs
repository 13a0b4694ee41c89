//! Landmark-to-mesh displacement decoder.
//!
//! Each frame is decoded independently. The K landmark displacements become
//! query tokens (a projection of the 3D displacement plus a learned embedding of
//! the landmark's index); the neutral landmarks become key/value tokens the same
//! way. Multi-head cross-attention lets every query read the identity's
//! geometry, the attended features are added back to the queries, and a dense
//! head maps the flattened tokens to V x 3 vertex displacements. A linear path
//! from the raw landmark displacements to the output runs alongside the head.
//!
//! The output layer is `hidden x 3V` and dominates the parameter count for
//! realistic meshes.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::dataset::{global_scale, Dataset};
use crate::error::{Error, Result};
use crate::features::{self, frames_to_matrix, matrix_to_frames, neutral_tokens, rms_scale};
use crate::geometry::{per_vertex_error, DisplacementSequence, LandmarkFrame, Point3, PointSeries, Space};
use crate::nn::{glorot, grad_values, Activation, Adam, AdamConfig, Bound, Linear, ParamId, ParamStore};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub num_heads: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { d_model: 16, num_heads: 2 }
    }
}

impl AttentionConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub attention: AttentionConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub use_attention: bool,
    pub lr: f64,
    pub epochs: usize,
    /// Frames per optimizer step; 0 uses every training frame.
    pub batch_size: usize,
    /// Frame `t` of each sequence is held out when `t % holdout_every == holdout_every - 1`; 0 holds out nothing.
    pub holdout_every: usize,
    pub rng_seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            attention: AttentionConfig::default(),
            hidden: vec![64],
            activation: Activation::Tanh,
            use_attention: true,
            lr: 3e-3,
            epochs: 300,
            batch_size: 32,
            holdout_every: 5,
            rng_seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("decoder hidden widths must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("decoder lr must be positive".into()));
        }
        if self.holdout_every == 1 {
            return Err(Error::Config("holdout_every = 1 would hold out every frame".into()));
        }
        Ok(())
    }
}

/// Multi-head scaled dot-product attention with query/key/value projections
/// and an output mix, all `d_model x d_model` without biases.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub config: AttentionConfig,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, config: AttentionConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), glorot(rng, d, d));
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        Ok(Self { config, wq, wk, wv, wo })
    }

    /// Output (n_q x d_model) and the per-head attention weights (n_q x n_k each).
    pub fn forward_with_weights<'t>(
        &self,
        p: &Bound<'t>,
        queries: Var<'t>,
        keys: Var<'t>,
        values: Var<'t>,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let d = self.config.d_model;
        if queries.shape().1 != d || keys.shape().1 != d || values.shape().1 != d {
            return Err(Error::Dimension(format!(
                "attention inputs have widths {}, {}, {}; d_model is {d}",
                queries.shape().1,
                keys.shape().1,
                values.shape().1
            )));
        }
        if keys.shape().0 != values.shape().0 || keys.shape().0 == 0 {
            return Err(Error::Dimension("keys and values need the same non-zero number of rows".into()));
        }
        let hd = self.config.head_dim();
        let q = queries.matmul(p[self.wq]);
        let k = keys.matmul(p[self.wk]);
        let v = values.matmul(p[self.wv]);
        let mut heads = Vec::with_capacity(self.config.num_heads);
        let mut weights = Vec::with_capacity(self.config.num_heads);
        for h in 0..self.config.num_heads {
            let (qh, kh, vh) = (q.slice_cols(h * hd, hd), k.slice_cols(h * hd, hd), v.slice_cols(h * hd, hd));
            let a = (qh.matmul(kh.t()) * (1.0 / (hd as f64).sqrt())).softmax_rows();
            heads.push(a.matmul(vh));
            weights.push(a);
        }
        Ok((Var::concat_cols(&heads).matmul(p[self.wo]), weights))
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, queries: Var<'t>, keys: Var<'t>, values: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(p, queries, keys, values)?.0)
    }
}

/// Value-level cross-attention with the weights held in `store`.
pub fn cross_attention(
    attn: &CrossAttention,
    store: &ParamStore,
    queries: &Matrix,
    keys: &Matrix,
    values: &Matrix,
) -> Result<Matrix> {
    let tape = Tape::new();
    let p = store.bind(&tape);
    let out = attn.forward(&p, tape.constant(queries.clone()), tape.constant(keys.clone()), tape.constant(values.clone()))?;
    Ok((*out.value()).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderScales {
    /// mm per unit of landmark displacement input
    pub landmark: f64,
    /// mm per unit of mesh displacement output
    pub mesh: f64,
    /// mm per unit of neutral landmark position
    pub neutral: f64,
}

impl Default for DecoderScales {
    fn default() -> Self {
        Self { landmark: 1.0, mesh: 1.0, neutral: 100.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DisplacementDecoder {
    cfg: DecoderConfig,
    k: usize,
    v: usize,
    scales: DecoderScales,
    store: ParamStore,
    disp_proj: Linear,
    disp_ids: ParamId,
    neutral_proj: Linear,
    neutral_ids: ParamId,
    attention: CrossAttention,
    trunk: Vec<Linear>,
    out: Linear,
    skip: Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: DecoderConfig,
    num_landmarks: usize,
    num_vertices: usize,
    scales: DecoderScales,
}

impl DisplacementDecoder {
    pub fn new(num_landmarks: usize, num_vertices: usize, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        if num_landmarks == 0 || num_vertices < num_landmarks {
            return Err(Error::Config(format!(
                "decoder needs 0 < K <= V, got K = {num_landmarks}, V = {num_vertices}"
            )));
        }
        let (k, v, d) = (num_landmarks, num_vertices, cfg.attention.d_model);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut store = ParamStore::new();
        let disp_proj = Linear::new(&mut store, "disp_proj", 3, d, &mut rng);
        let disp_ids = store.add("disp_ids", Matrix::from_fn(k, d, |_, _| rng.random_range(-0.5..0.5)));
        let neutral_proj = Linear::new(&mut store, "neutral_proj", 3, d, &mut rng);
        let neutral_ids = store.add("neutral_ids", Matrix::from_fn(k, d, |_, _| rng.random_range(-0.5..0.5)));
        let attention = CrossAttention::new(&mut store, "attention", cfg.attention.clone(), &mut rng)?;
        let mut trunk = Vec::new();
        let mut width = k * d;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            trunk.push(Linear::new(&mut store, &format!("trunk{i}"), width, h, &mut rng));
            width = h;
        }
        let out = Linear::new(&mut store, "out", width, 3 * v, &mut rng);
        let skip = Linear::new(&mut store, "skip", 3 * k, 3 * v, &mut rng);
        Ok(Self {
            cfg,
            k,
            v,
            scales: DecoderScales::default(),
            store,
            disp_proj,
            disp_ids,
            neutral_proj,
            neutral_ids,
            attention,
            trunk,
            out,
            skip,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn num_landmarks(&self) -> usize {
        self.k
    }

    pub fn num_vertices(&self) -> usize {
        self.v
    }

    pub fn scales(&self) -> DecoderScales {
        self.scales
    }

    pub fn set_scales(&mut self, scales: DecoderScales) {
        self.scales = scales;
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn attention(&self) -> &CrossAttention {
        &self.attention
    }

    /// `B x 3K` scaled landmark displacements of one identity, its `K x 3`
    /// scaled neutral tokens -> `B x 3V` scaled mesh displacements.
    pub fn forward<'t>(&self, p: &Bound<'t>, disp: Var<'t>, neutral: Var<'t>) -> Result<Var<'t>> {
        let (k, d) = (self.k, self.cfg.attention.d_model);
        if disp.shape().1 != 3 * k {
            return Err(Error::Dimension(format!(
                "landmark displacements have {} values per frame, decoder expects {}",
                disp.shape().1,
                3 * k
            )));
        }
        if neutral.shape() != (k, 3) {
            return Err(Error::Dimension(format!("neutral tokens are {:?}, decoder expects {k}x3", neutral.shape())));
        }
        let b = disp.shape().0;
        let tiled_ids = tile_rows(p[self.disp_ids], b);
        let queries = self.disp_proj.forward(p, disp.reshape(b * k, 3)) + tiled_ids;
        let fused = if self.cfg.use_attention {
            let kv = self.neutral_proj.forward(p, neutral) + p[self.neutral_ids];
            queries + self.attention.forward(p, queries, kv, kv)?
        } else {
            queries
        };
        let mut h = fused.reshape(b, k * d);
        for layer in &self.trunk {
            h = self.cfg.activation.apply(layer.forward(p, h));
        }
        Ok(self.out.forward(p, h) + self.skip.forward(p, disp))
    }

    fn check_neutral(&self, neutral: &LandmarkFrame) -> Result<Matrix> {
        features::check_points("neutral landmark frame", neutral.num_points(), self.k)?;
        neutral_tokens(neutral, self.scales.neutral)
    }

    fn decode_rows(&self, frames: &[Vec<Point3>], neutral: &LandmarkFrame) -> Result<Vec<Vec<Point3>>> {
        if let Some(f) = frames.iter().find(|f| f.len() != self.k) {
            return Err(Error::Dimension(format!("frame has {} landmarks, decoder expects {}", f.len(), self.k)));
        }
        let tokens = self.check_neutral(neutral)?;
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let x = tape.constant(frames_to_matrix(frames, self.scales.landmark));
        let y = self.forward(&p, x, tape.constant(tokens))?;
        let out = matrix_to_frames(&y.value(), self.scales.mesh);
        if out.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("decoded displacements are not finite".into()));
        }
        Ok(out)
    }

    /// K landmark displacements -> V vertex displacements (mm).
    pub fn decode_frame(&self, lm_disp: &[Point3], neutral: &LandmarkFrame) -> Result<Vec<Point3>> {
        Ok(self.decode_rows(&[lm_disp.to_vec()], neutral)?.remove(0))
    }

    pub fn decode_sequence(&self, lm_disp: &DisplacementSequence, neutral: &LandmarkFrame) -> Result<DisplacementSequence> {
        if lm_disp.space != Space::Landmark {
            return Err(Error::Usage("decoder input must be landmark-space displacements".into()));
        }
        let frames = lm_disp
            .frames()
            .iter()
            .map(|f| Ok(self.decode_rows(std::slice::from_ref(f), neutral)?.remove(0)))
            .collect::<Result<Vec<_>>>()?;
        DisplacementSequence::new(frames, Space::Mesh)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = Meta { config: self.cfg.clone(), num_landmarks: self.k, num_vertices: self.v, scales: self.scales };
        Checkpoint::new(CHECKPOINT_KIND, &meta, self.store.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = ck.meta()?;
        let mut d = Self::new(meta.num_landmarks, meta.num_vertices, meta.config)?;
        d.store.load_from(&ck.params).map_err(Error::Compatibility)?;
        d.scales = meta.scales;
        Ok(d)
    }
}

/// Repeat a `K x d` var `b` times along rows.
fn tile_rows(x: Var<'_>, b: usize) -> Var<'_> {
    let (k, d) = x.shape();
    let index: Rc<[u32]> = (0..b * k * d).map(|i| (i % (k * d)) as u32).collect();
    x.gather(index, b * k, d)
}

/// One supervised pair: landmark and mesh displacements of a frame plus the
/// neutral landmarks of its identity.
#[derive(Debug, Clone)]
pub struct FrameSample {
    pub identity: String,
    pub neutral: LandmarkFrame,
    pub lm_disp: Vec<Point3>,
    pub mesh_disp: Vec<Point3>,
}

/// Training and held-out frames of every record.
pub fn split_frames(data: &Dataset, holdout_every: usize) -> Result<(Vec<FrameSample>, Vec<FrameSample>)> {
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for rec in &data.records {
        let neutral = rec.neutral_landmarks(&data.landmarks)?;
        let lm = rec.landmark_displacements(&data.landmarks)?;
        let mesh = rec.mesh_displacements()?;
        for (t, (l, m)) in lm.offsets.iter().zip(&mesh.offsets).enumerate() {
            let s = FrameSample {
                identity: rec.identity_id.clone(),
                neutral: neutral.clone(),
                lm_disp: l.clone(),
                mesh_disp: m.clone(),
            };
            if holdout_every > 1 && t % holdout_every == holdout_every - 1 {
                held.push(s);
            } else {
                train.push(s);
            }
        }
    }
    Ok((train, held))
}

/// Mean-squared error (scaled units) over a batch, grouping frames by identity.
pub fn batch_loss<'t>(model: &DisplacementDecoder, p: &Bound<'t>, batch: &[&FrameSample]) -> Result<Var<'t>> {
    let tape = p.vars()[0].tape();
    let mut groups: BTreeMap<&str, Vec<&FrameSample>> = BTreeMap::new();
    for s in batch {
        groups.entry(s.identity.as_str()).or_default().push(s);
    }
    let sc = model.scales;
    let mut total: Option<Var> = None;
    let mut count = 0usize;
    for members in groups.values() {
        let lm: Vec<Vec<Point3>> = members.iter().map(|s| s.lm_disp.clone()).collect();
        let mesh: Vec<Vec<Point3>> = members.iter().map(|s| s.mesh_disp.clone()).collect();
        let target = frames_to_matrix(&mesh, sc.mesh);
        if target.cols() != 3 * model.v {
            return Err(Error::Dimension(format!(
                "mesh displacements have {} vertices, decoder expects {}",
                target.cols() / 3,
                model.v
            )));
        }
        let tokens = model.check_neutral(&members[0].neutral)?;
        let pred = model.forward(p, tape.constant(frames_to_matrix(&lm, sc.landmark)), tape.constant(tokens))?;
        let sq = (pred - tape.constant(target)).square().sum();
        count += members.len() * 3 * model.v;
        total = Some(match total {
            Some(t) => t + sq,
            None => sq,
        });
    }
    let total = total.ok_or_else(|| Error::Usage("empty decoder batch".into()))?;
    Ok(total * (1.0 / count as f64))
}

/// Per-vertex error (0.1 mm) of the decoder on a set of frames.
pub fn evaluate_frames(model: &DisplacementDecoder, samples: &[FrameSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("no frames to evaluate".into()));
    }
    let mut pred = Vec::with_capacity(samples.len());
    let mut gt = Vec::with_capacity(samples.len());
    for s in samples {
        pred.push(model.decode_frame(&s.lm_disp, &s.neutral)?);
        gt.push(s.mesh_disp.clone());
    }
    per_vertex_error(&DisplacementSequence::new(pred, Space::Mesh)?, &DisplacementSequence::new(gt, Space::Mesh)?)
}

#[derive(Debug, Clone)]
pub struct DecoderTraining {
    pub model: DisplacementDecoder,
    /// Mean-squared error in mm² per epoch.
    pub loss_curve: Vec<f64>,
    pub train_error: f64,
    /// None when nothing was held out.
    pub heldout_error: Option<f64>,
}

/// Fits a decoder to frame pairs. Scales are taken from the training frames.
pub fn train_decoder_on(
    train: &[FrameSample],
    heldout: &[FrameSample],
    neutral_scale: f64,
    cfg: &DecoderConfig,
) -> Result<DecoderTraining> {
    let first = train.first().ok_or_else(|| Error::Usage("decoder training set is empty".into()))?;
    let mut model = DisplacementDecoder::new(first.lm_disp.len(), first.mesh_disp.len(), cfg.clone())?;
    model.scales = DecoderScales {
        landmark: rms_scale(train.iter().map(|s| &s.lm_disp)),
        mesh: rms_scale(train.iter().map(|s| &s.mesh_disp)),
        neutral: neutral_scale,
    };
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0xdec0de);
    let n = train.len();
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut order: Vec<usize> = (0..n).collect();
    let mesh2 = model.scales.mesh * model.scales.mesh;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch = 0.0;
        for chunk in order.chunks(batch) {
            let members: Vec<&FrameSample> = chunk.iter().map(|&i| &train[i]).collect();
            let tape = Tape::new();
            let p = model.store.bind(&tape);
            let loss = batch_loss(&model, &p, &members)?;
            epoch += loss.item() * chunk.len() as f64;
            let grads = tape.grad(loss, p.vars());
            opt.step(&mut model.store, &grad_values(&grads));
        }
        let mse = epoch / n as f64 * mesh2;
        if !mse.is_finite() {
            return Err(Error::Numeric("decoder loss became non-finite".into()));
        }
        curve.push(mse);
    }
    let train_error = evaluate_frames(&model, train)?;
    let heldout_error = if heldout.is_empty() { None } else { Some(evaluate_frames(&model, heldout)?) };
    Ok(DecoderTraining { model, loss_curve: curve, train_error, heldout_error })
}

/// Fits a decoder on every record of `data`, holding out frames per `cfg.holdout_every`.
pub fn train_decoder(data: &Dataset, cfg: &DecoderConfig) -> Result<DecoderTraining> {
    if data.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let (train, held) = split_frames(data, cfg.holdout_every)?;
    train_decoder_on(&train, &held, global_scale(&data.records), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticSpec};

    fn small() -> (DisplacementDecoder, LandmarkFrame) {
        let cfg = DecoderConfig { attention: AttentionConfig { d_model: 8, num_heads: 2 }, hidden: vec![8], ..Default::default() };
        let d = DisplacementDecoder::new(5, 12, cfg).unwrap();
        let lm = LandmarkFrame::new((0..5).map(|i| [i as f64 * 9.0, (i % 2) as f64 * 4.0, 1.0]).collect()).unwrap();
        (d, lm)
    }

    fn frame(phase: f64) -> Vec<Point3> {
        (0..5).map(|i| [(i as f64 + phase).sin(), phase, -(i as f64) * phase]).collect()
    }

    #[test]
    fn shapes_and_framewise_decoding() {
        let (d, lm) = small();
        let f = d.decode_frame(&frame(0.3), &lm).unwrap();
        assert_eq!(f.len(), 12);
        assert_eq!(f, d.decode_frame(&frame(0.3), &lm).unwrap());
        let seq = DisplacementSequence::new(vec![frame(0.1), frame(0.2), frame(0.3)], Space::Landmark).unwrap();
        let out = d.decode_sequence(&seq, &lm).unwrap();
        assert_eq!(out.offsets.len(), 3);
        assert_eq!(out.space, Space::Mesh);
        assert_eq!(out.offsets[2], f);
        let rev = DisplacementSequence::new(vec![frame(0.3), frame(0.2), frame(0.1)], Space::Landmark).unwrap();
        let out_rev = d.decode_sequence(&rev, &lm).unwrap();
        assert_eq!(out_rev.offsets[0], out.offsets[2]);
        assert_eq!(out_rev.offsets[2], out.offsets[0]);
    }

    #[test]
    fn zero_input_frames_decode_identically() {
        let (d, lm) = small();
        let zeros = DisplacementSequence::zeros(4, 5, Space::Landmark);
        let out = d.decode_sequence(&zeros, &lm).unwrap();
        assert!(out.offsets.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn dimension_errors() {
        let (d, lm) = small();
        assert!(matches!(d.decode_frame(&frame(0.1)[..4], &lm), Err(Error::Dimension(_))));
        let lm6 = LandmarkFrame::new(vec![[0.0; 3]; 6]).unwrap();
        assert!(matches!(d.decode_frame(&frame(0.1), &lm6), Err(Error::Dimension(_))));
        assert!(DisplacementDecoder::new(5, 4, DecoderConfig::default()).is_err());
        let bad = DecoderConfig { attention: AttentionConfig { d_model: 10, num_heads: 3 }, ..Default::default() };
        assert!(matches!(DisplacementDecoder::new(5, 12, bad), Err(Error::Config(_))));
    }

    #[test]
    fn singleton_key_ignores_query() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let attn = CrossAttention::new(&mut store, "a", AttentionConfig { d_model: 4, num_heads: 2 }, &mut rng).unwrap();
        let kv = Matrix::from_rows(&[vec![0.3, -0.2, 0.9, 0.1]]);
        let q1 = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]);
        let q2 = Matrix::from_rows(&[vec![-5.0, 0.0, 0.5, 2.0]]);
        let a = cross_attention(&attn, &store, &q1, &kv, &kv).unwrap();
        let b = cross_attention(&attn, &store, &q2, &kv, &kv).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-15);
        }
        let narrow = Matrix::zeros(1, 3);
        assert!(matches!(cross_attention(&attn, &store, &narrow, &kv, &kv), Err(Error::Dimension(_))));
    }

    #[test]
    fn training_is_seeded_and_rejects_empty_sets() {
        let data = generate_synthetic(&SyntheticSpec { t: 6, k: 4, v: 12, ..Default::default() }).unwrap().dataset;
        let cfg = DecoderConfig { epochs: 3, hidden: vec![8], attention: AttentionConfig { d_model: 4, num_heads: 1 }, ..Default::default() };
        let a = train_decoder(&data, &cfg).unwrap();
        let b = train_decoder(&data, &cfg).unwrap();
        assert_eq!(a.model.params().checksum(), b.model.params().checksum());
        assert_eq!(a.loss_curve.len(), 3);
        assert!(a.heldout_error.is_some());
        assert!(matches!(train_decoder_on(&[], &[], 1.0, &cfg), Err(Error::Usage(_))));
        let off = DecoderConfig { use_attention: false, ..cfg };
        let c = train_decoder(&data, &off).unwrap();
        assert!(c.heldout_error.unwrap().is_finite());
    }
}
