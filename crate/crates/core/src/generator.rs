//! Coarse-to-fine landmark sequence generator.
//!
//! Level 0 turns noise plus an embedding of the neutral landmark frame into a
//! short latent sequence. Every later level linearly upsamples the previous
//! latent sequence in time, adds fresh noise and its own neutral embedding, and
//! refines it with a residual temporal-convolution block. Each level has a
//! per-frame head whose output is added to the upsampled output of the level
//! below; the result is a sequence of autoencoder codes (or K x 3 displacement
//! features when the autoencoder is disabled). All layers are
//! convolutional in time, so one set of parameters serves any sequence length.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autoencoder::LandmarkAutoencoder;
use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{self, matrix_to_frames};
use crate::geometry::{interpolation_matrix, DisplacementSequence, LandmarkFrame, Space};
use crate::nn::{Activation, Bound, Linear, ParamStore, TemporalConv};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "generator_level";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    pub level_index: usize,
    pub temporal_len: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_levels: usize,
    pub channels: usize,
    pub kernel_size: usize,
    /// Noise amplitude at the coarsest level.
    pub base_noise_std: f64,
    /// Noise amplitude at every finer level.
    pub refine_noise_std: f64,
    pub activation: Activation,
    /// Zero the last convolution and the output head of every level.
    pub zero_init_output: bool,
    pub rng_seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_levels: 4,
            channels: 32,
            kernel_size: 5,
            base_noise_std: 1.0,
            refine_noise_std: 0.1,
            activation: Activation::Tanh,
            zero_init_output: false,
            rng_seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::Config("generator needs at least 2 levels".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("generator channels must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config("generator kernel_size must be odd".into()));
        }
        if self.base_noise_std < 0.0 || self.refine_noise_std < 0.0 {
            return Err(Error::Config("noise amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn noise_std(&self, level: usize) -> f64 {
        if level == 0 {
            self.base_noise_std
        } else {
            self.refine_noise_std
        }
    }
}

/// Frames per level for a finest length `target_len`: ceil(target / 2^(L-1-l)), at least 2.
pub fn level_lengths(target_len: usize, num_levels: usize) -> Vec<usize> {
    (0..num_levels)
        .map(|l| {
            let div = 1usize << (num_levels - 1 - l);
            target_len.div_ceil(div).max(2)
        })
        .collect()
}

/// Per-level noise, each `temporal_len x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePyramid {
    pub levels: Vec<Matrix>,
}

impl NoisePyramid {
    pub fn sample(lengths: &[usize], channels: usize, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let levels = lengths
            .iter()
            .enumerate()
            .map(|(l, &t)| {
                let std = cfg.noise_std(l);
                Matrix::from_fn(t, channels, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
            })
            .collect();
        Self { levels }
    }

    pub fn zeros(lengths: &[usize], channels: usize) -> Self {
        Self { levels: lengths.iter().map(|&t| Matrix::zeros(t, channels)).collect() }
    }

    /// Noise at the coarsest level only; finer levels get zeros.
    pub fn anchored(first: Matrix, lengths: &[usize], channels: usize) -> Self {
        let mut p = Self::zeros(lengths, channels);
        p.levels[0] = first;
        p
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.levels.iter().map(Matrix::rows).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorLevel {
    pub config: LevelConfig,
    store: ParamStore,
    embed: Linear,
    conv_in: TemporalConv,
    conv_out: TemporalConv,
    head: Linear,
}

impl GeneratorLevel {
    fn new(config: LevelConfig, k: usize, out_dim: usize, gcfg: &GeneratorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(gcfg.rng_seed.wrapping_add(1000 + config.level_index as u64));
        let mut store = ParamStore::new();
        let c = config.channels;
        let kern = config.kernel_size;
        let embed = Linear::new(&mut store, "embed", 3 * k, c, &mut rng);
        let conv_in = TemporalConv::new(&mut store, "conv_in", c, c, kern, &mut rng);
        let (conv_out, head) = if gcfg.zero_init_output {
            (TemporalConv::zeroed(&mut store, "conv_out", c, c, kern), Linear::zeroed(&mut store, "head", c, out_dim))
        } else {
            (
                TemporalConv::new(&mut store, "conv_out", c, c, kern, &mut rng),
                Linear::new(&mut store, "head", c, out_dim, &mut rng),
            )
        };
        Self { config, store, embed, conv_in, conv_out, head }
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// One refinement step. `prev` is the previous level's latent sequence (None at
    /// level 0); it is resampled to the noise length and used as the residual base.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        activation: Activation,
        prev: Option<Var<'t>>,
        noise: Var<'t>,
        neutral_feat: Var<'t>,
    ) -> Result<Var<'t>> {
        let (t, c) = noise.shape();
        if c != self.config.channels {
            return Err(Error::Dimension(format!("noise has {c} channels, level expects {}", self.config.channels)));
        }
        if neutral_feat.shape() != (1, self.embed.fan_in) {
            return Err(Error::Dimension(format!(
                "neutral features are {:?}, level expects 1x{}",
                neutral_feat.shape(),
                self.embed.fan_in
            )));
        }
        let tape = noise.tape();
        let base = match prev {
            Some(prev) => {
                if prev.shape().1 != c {
                    return Err(Error::Dimension("previous level has a different channel width".into()));
                }
                let up = tape.constant(interpolation_matrix(prev.shape().0, t));
                Some(up.matmul(prev))
            }
            None => None,
        };
        let cond = self.embed.forward(p, neutral_feat).broadcast_rows(t);
        let mut x = noise + cond;
        if let Some(b) = base {
            x = x + b;
        }
        let h = activation.apply(self.conv_in.forward(p, x));
        let h = self.conv_out.forward(p, h);
        Ok(match base {
            Some(b) => b + h,
            None => h,
        })
    }

    /// T x channels -> T x out_dim
    pub fn head<'t>(&self, p: &Bound<'t>, latent: Var<'t>) -> Var<'t> {
        self.head.forward(p, latent)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LevelMeta {
    level: LevelConfig,
    generator: GeneratorConfig,
    num_landmarks: usize,
    out_dim: usize,
    use_ae: bool,
    disp_scale: f64,
    neutral_scale: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorStack {
    cfg: GeneratorConfig,
    k: usize,
    out_dim: usize,
    levels: Vec<GeneratorLevel>,
    trained_levels: usize,
    /// mm per unit of landmark displacement feature
    disp_scale: f64,
    /// mm per unit of neutral landmark feature
    neutral_scale: f64,
    ae: Option<LandmarkAutoencoder>,
}

impl GeneratorStack {
    /// Fresh stack trained at `clip_len` frames. With an autoencoder the heads emit
    /// its codes and its decoder (frozen) produces displacements.
    pub fn new(num_landmarks: usize, cfg: GeneratorConfig, clip_len: usize, ae: Option<LandmarkAutoencoder>) -> Result<Self> {
        cfg.validate()?;
        if clip_len < 2 {
            return Err(Error::Usage("clip length must be at least 2".into()));
        }
        if let Some(ae) = &ae {
            features::check_points("autoencoder", ae.num_landmarks(), num_landmarks)?;
        }
        let lengths = level_lengths(clip_len, cfg.num_levels);
        if lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "clip length {clip_len} is too short for {} strictly increasing levels ({lengths:?})",
                cfg.num_levels
            )));
        }
        let out_dim = ae.as_ref().map_or(3 * num_landmarks, LandmarkAutoencoder::latent_dim);
        let levels = lengths
            .iter()
            .enumerate()
            .map(|(l, &t)| {
                let lc = LevelConfig {
                    level_index: l,
                    temporal_len: t,
                    channels: cfg.channels,
                    kernel_size: cfg.kernel_size,
                    noise_std: cfg.noise_std(l),
                };
                GeneratorLevel::new(lc, num_landmarks, out_dim, &cfg)
            })
            .collect();
        let disp_scale = ae.as_ref().map_or(1.0, LandmarkAutoencoder::input_scale);
        Ok(Self { cfg, k: num_landmarks, out_dim, levels, trained_levels: 0, disp_scale, neutral_scale: 100.0, ae })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn num_landmarks(&self) -> usize {
        self.k
    }

    pub fn levels(&self) -> &[GeneratorLevel] {
        &self.levels
    }

    pub fn level_mut(&mut self, l: usize) -> &mut GeneratorLevel {
        &mut self.levels[l]
    }

    pub fn autoencoder(&self) -> Option<&LandmarkAutoencoder> {
        self.ae.as_ref()
    }

    pub fn uses_autoencoder(&self) -> bool {
        self.ae.is_some()
    }

    pub fn disp_scale(&self) -> f64 {
        self.disp_scale
    }

    pub fn set_disp_scale(&mut self, s: f64) -> Result<()> {
        if self.ae.is_some() {
            return Err(Error::State("displacement scale is owned by the autoencoder".into()));
        }
        self.disp_scale = s;
        Ok(())
    }

    pub fn neutral_scale(&self) -> f64 {
        self.neutral_scale
    }

    pub fn set_neutral_scale(&mut self, s: f64) {
        self.neutral_scale = s;
    }

    pub fn trained_levels(&self) -> usize {
        self.trained_levels
    }

    pub fn is_trained(&self) -> bool {
        self.trained_levels == self.levels.len()
    }

    /// Record that level `l` finished training. Levels must complete in order.
    pub fn mark_level_trained(&mut self, l: usize) -> Result<()> {
        if l != self.trained_levels {
            return Err(Error::State(format!(
                "level {l} cannot complete before level {}",
                self.trained_levels
            )));
        }
        self.trained_levels += 1;
        Ok(())
    }

    /// Treat the current parameters as final, e.g. to inspect an initialized stack.
    pub fn mark_all_trained(&mut self) {
        self.trained_levels = self.levels.len();
    }

    pub fn channels(&self) -> usize {
        self.cfg.channels
    }

    pub fn training_lengths(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.config.temporal_len).collect()
    }

    pub fn neutral_features(&self, neutral: &LandmarkFrame) -> Result<Matrix> {
        features::check_points("neutral landmark frame", neutral.num_points(), self.k)?;
        features::neutral_features(neutral, self.neutral_scale)
    }

    /// Runs levels `0..=upto` and returns the head output of level `upto`
    /// (`T x out_dim`). Every level's head adds a residual to the upsampled
    /// output of the level below.
    pub fn forward_codes<'t>(
        &self,
        bounds: &[Bound<'t>],
        upto: usize,
        noise: &[Var<'t>],
        neutral_feat: Var<'t>,
    ) -> Result<Var<'t>> {
        let tape = neutral_feat.tape();
        let mut prev: Option<(Var<'t>, Var<'t>)> = None;
        for l in 0..=upto {
            let level = &self.levels[l];
            let latent = level.forward(&bounds[l], self.cfg.activation, prev.map(|p| p.0), noise[l], neutral_feat)?;
            let mut codes = level.head(&bounds[l], latent);
            if let Some((_, prev_codes)) = prev {
                let up = tape.constant(interpolation_matrix(prev_codes.shape().0, latent.shape().0));
                codes = codes + up.matmul(prev_codes);
            }
            prev = Some((latent, codes));
        }
        Ok(prev.expect("at least one level").1)
    }

    /// Codes through the autoencoder decoder (if any), rebased so frame 0 is
    /// exactly zero. Output is T x 3K in units of `disp_scale`.
    pub fn displacement_features<'t>(&self, ae_bound: Option<&Bound<'t>>, codes: Var<'t>) -> Var<'t> {
        let disp = match (&self.ae, ae_bound) {
            (Some(ae), Some(b)) => ae.decode_var(b, codes),
            (Some(_), None) => panic!("autoencoder parameters must be bound"),
            (None, _) => codes,
        };
        rebase_rows(disp)
    }

    /// Displacement sequence from an explicit noise pyramid.
    pub fn generate_with_noise(&self, neutral: &LandmarkFrame, noise: &NoisePyramid) -> Result<DisplacementSequence> {
        if !self.is_trained() {
            return Err(Error::State(format!(
                "generator has {} of {} levels trained",
                self.trained_levels,
                self.levels.len()
            )));
        }
        if noise.levels.len() != self.levels.len() {
            return Err(Error::Dimension(format!(
                "noise pyramid has {} levels, generator has {}",
                noise.levels.len(),
                self.levels.len()
            )));
        }
        let tape = Tape::new();
        let bounds: Vec<Bound> = self.levels.iter().map(|l| l.store.bind(&tape)).collect();
        let ae_bound = self.ae.as_ref().map(|ae| ae.params().bind(&tape));
        let nf = tape.constant(self.neutral_features(neutral)?);
        let noise_vars: Vec<Var> = noise.levels.iter().map(|m| tape.constant(m.clone())).collect();
        let last = self.levels.len() - 1;
        let codes = self.forward_codes(&bounds, last, &noise_vars, nf)?;
        let disp = self.displacement_features(ae_bound.as_ref(), codes);
        let frames = matrix_to_frames(&disp.value(), self.disp_scale);
        if frames.iter().flatten().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("generated displacements are not finite".into()));
        }
        DisplacementSequence::new(frames, Space::Landmark)
    }

    /// Seeded generation of `target_len` frames of landmark displacements.
    pub fn generate(&self, neutral: &LandmarkFrame, target_len: usize, seed: u64) -> Result<DisplacementSequence> {
        if target_len < 2 {
            return Err(Error::Usage(format!("target length must be at least 2, got {target_len}")));
        }
        let lengths = level_lengths(target_len, self.levels.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = NoisePyramid::sample(&lengths, self.cfg.channels, &self.cfg, &mut rng);
        self.generate_with_noise(neutral, &noise)
    }

    pub fn level_checkpoint(&self, l: usize) -> Result<Checkpoint> {
        let meta = LevelMeta {
            level: self.levels[l].config.clone(),
            generator: self.cfg.clone(),
            num_landmarks: self.k,
            out_dim: self.out_dim,
            use_ae: self.ae.is_some(),
            disp_scale: self.disp_scale,
            neutral_scale: self.neutral_scale,
        };
        Checkpoint::new(CHECKPOINT_KIND, &meta, self.levels[l].store.clone())
    }

    /// Loads the parameters of level `l` and marks it trained.
    pub fn load_level(&mut self, l: usize, ck: &Checkpoint) -> Result<()> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: LevelMeta = ck.meta()?;
        if meta.level != self.levels[l].config || meta.num_landmarks != self.k || meta.out_dim != self.out_dim {
            return Err(Error::Compatibility(format!("level {l} checkpoint does not match this generator")));
        }
        if meta.use_ae != self.ae.is_some() {
            return Err(Error::Compatibility("checkpoint and generator disagree on autoencoder use".into()));
        }
        self.levels[l].store.load_from(&ck.params).map_err(Error::Compatibility)?;
        self.neutral_scale = meta.neutral_scale;
        self.disp_scale = meta.disp_scale;
        self.mark_level_trained(l)
    }

    /// Rebuilds a trained stack from its level checkpoints (coarse to fine).
    pub fn from_checkpoints(levels: &[Checkpoint], ae: Option<LandmarkAutoencoder>) -> Result<Self> {
        let first = levels.first().ok_or_else(|| Error::NotFound("no generator level checkpoints".into()))?;
        first.expect_kind(CHECKPOINT_KIND)?;
        let meta: LevelMeta = first.meta()?;
        if meta.generator.num_levels != levels.len() {
            return Err(Error::Compatibility(format!(
                "generator has {} levels, found {} checkpoints",
                meta.generator.num_levels,
                levels.len()
            )));
        }
        let clip_len = {
            let last: LevelMeta = levels[levels.len() - 1].meta()?;
            last.level.temporal_len
        };
        let mut stack = Self::new(meta.num_landmarks, meta.generator, clip_len, ae)?;
        for (l, ck) in levels.iter().enumerate() {
            stack.load_level(l, ck)?;
        }
        Ok(stack)
    }
}

/// Subtract row 0 from every row.
pub fn rebase_rows(x: Var<'_>) -> Var<'_> {
    let t = x.shape().0;
    x - x.slice_rows(0, 1).broadcast_rows(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn neutral(k: usize, shift: f64) -> LandmarkFrame {
        LandmarkFrame::new((0..k).map(|i| [i as f64 * 10.0 + shift, (i * i) as f64, -(i as f64) * shift]).collect())
            .unwrap()
    }

    fn stack(zero: bool) -> GeneratorStack {
        let cfg = GeneratorConfig { channels: 8, zero_init_output: zero, ..GeneratorConfig::default() };
        let mut s = GeneratorStack::new(5, cfg, 30, None).unwrap();
        s.mark_all_trained();
        s
    }

    #[test]
    fn level_lengths_default_schedule() {
        assert_eq!(level_lengths(30, 4), vec![4, 8, 15, 30]);
        assert_eq!(level_lengths(4, 4), vec![2, 2, 2, 4]);
        assert_eq!(level_lengths(120, 4), vec![15, 30, 60, 120]);
    }

    #[test]
    fn zero_noise_zero_output_level_is_zero() {
        let s = stack(true);
        let tape = Tape::new();
        let p = s.levels[0].store.bind(&tape);
        let nf = tape.constant(s.neutral_features(&neutral(5, 1.0)).unwrap());
        let noise = tape.constant(Matrix::zeros(4, 8));
        let latent = s.levels[0].forward(&p, Activation::Tanh, None, noise, nf).unwrap();
        assert!(latent.value().data().iter().all(|&x| x == 0.0));
        let out = s.levels[0].head(&p, latent);
        assert!(out.value().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn level_output_length_follows_noise_length() {
        let s = stack(false);
        let tape = Tape::new();
        let p = s.levels[1].store.bind(&tape);
        let nf = tape.constant(s.neutral_features(&neutral(5, 1.0)).unwrap());
        for t in [15, 30, 60] {
            let prev = tape.constant(Matrix::filled(7, 8, 0.1));
            let noise = tape.constant(Matrix::zeros(t, 8));
            let a = s.levels[1].forward(&p, Activation::Tanh, Some(prev), noise, nf).unwrap();
            let b = s.levels[1].forward(&p, Activation::Tanh, Some(prev), noise, nf).unwrap();
            assert_eq!(a.shape(), (t, 8));
            assert_eq!(*a.value(), *b.value());
        }
    }

    #[test]
    fn generate_contract() {
        let s = stack(false);
        let lm = neutral(5, 1.0);
        let a = s.generate(&lm, 30, 9).unwrap();
        assert_eq!(a.offsets.len(), 30);
        assert!(a.offsets[0].iter().all(|p| *p == [0.0; 3]));
        assert_eq!(a, s.generate(&lm, 30, 9).unwrap());
        assert!(a.max_abs_diff(&s.generate(&lm, 30, 10).unwrap()) > 0.0);
        assert!(a.max_abs_diff(&s.generate(&neutral(5, 3.0), 30, 9).unwrap()) > 0.0);
        for len in [4, 7, 15, 60, 120] {
            assert_eq!(s.generate(&lm, len, 1).unwrap().offsets.len(), len);
        }
        assert!(matches!(s.generate(&lm, 1, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn untrained_stack_refuses_to_generate() {
        let s = GeneratorStack::new(5, GeneratorConfig { channels: 4, ..Default::default() }, 30, None).unwrap();
        assert!(matches!(s.generate(&neutral(5, 0.0), 30, 0), Err(Error::State(_))));
    }

    #[test]
    fn levels_complete_in_order() {
        let mut s = GeneratorStack::new(5, GeneratorConfig { channels: 4, ..Default::default() }, 30, None).unwrap();
        assert!(matches!(s.mark_level_trained(1), Err(Error::State(_))));
        s.mark_level_trained(0).unwrap();
        s.mark_level_trained(1).unwrap();
    }

    #[test]
    fn checkpoints_round_trip() {
        let s = stack(false);
        let cks: Vec<Checkpoint> = (0..4).map(|l| s.level_checkpoint(l).unwrap()).collect();
        let back = GeneratorStack::from_checkpoints(&cks, None).unwrap();
        let lm = neutral(5, 2.0);
        assert_eq!(back.generate(&lm, 12, 4).unwrap(), s.generate(&lm, 12, 4).unwrap());
    }

    #[test]
    fn wrong_neutral_size_is_dimension_error() {
        let s = stack(false);
        assert!(matches!(s.generate(&neutral(6, 0.0), 10, 0), Err(Error::Dimension(_))));
    }
}
