//! Adversaries on landmark displacement sequences.
//!
//! All three networks share one body: a stack of same-padded temporal
//! convolutions, a mean over time and a linear read-out. The critic emits an
//! unbounded score; the identity and coherence discriminators emit
//! probabilities. The identity discriminator concatenates an embedding of the
//! neutral landmark frame to every input frame. The coherence discriminator
//! sees consecutive-frame differences only.
//!
//! Graph-level functions take sequences as `T x 3K` vars in the same
//! standardized units the generator produces (millimetres divided by
//! `disp_scale`); the value-level methods on [`Discriminators`] accept
//! millimetre sequences and do the conversion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::features::{self, frames_to_matrix};
use crate::geometry::{DisplacementSequence, LandmarkFrame, PointSeries};
use crate::nn::{Activation, Bound, Linear, ParamStore, TemporalConv};
use crate::tensor::Matrix;

pub const CHECKPOINT_KIND: &str = "discriminators";

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub num_temporal_blocks: usize,
    pub gradient_penalty_weight: f64,
    pub activation: Activation,
    pub zero_init_output: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel_size: 5,
            num_temporal_blocks: 1,
            gradient_penalty_weight: 10.0,
            activation: Activation::LeakyRelu,
            zero_init_output: false,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        check_body(self.channels, self.kernel_size, self.num_temporal_blocks)?;
        if !(self.gradient_penalty_weight >= 0.0) {
            return Err(Error::Config("gradient_penalty_weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionalDiscConfig {
    pub channels: usize,
    pub kernel_size: usize,
    pub num_temporal_blocks: usize,
    /// Width of the neutral-frame embedding concatenated to each frame.
    pub condition_dim: usize,
    pub activation: Activation,
    pub zero_init_output: bool,
}

impl Default for ConditionalDiscConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            kernel_size: 5,
            num_temporal_blocks: 1,
            condition_dim: 16,
            activation: Activation::LeakyRelu,
            zero_init_output: false,
        }
    }
}

impl ConditionalDiscConfig {
    pub fn validate(&self) -> Result<()> {
        check_body(self.channels, self.kernel_size, self.num_temporal_blocks)?;
        if self.condition_dim == 0 {
            return Err(Error::Config("condition_dim must be positive".into()));
        }
        Ok(())
    }
}

fn check_body(channels: usize, kernel: usize, blocks: usize) -> Result<()> {
    if channels == 0 || blocks == 0 {
        return Err(Error::Config("discriminator channels and blocks must be positive".into()));
    }
    if kernel % 2 == 0 {
        return Err(Error::Config("discriminator kernel_size must be odd".into()));
    }
    Ok(())
}

/// Temporal convolutions, mean over time, linear read-out to one value.
#[derive(Debug, Clone)]
struct Body {
    convs: Vec<TemporalConv>,
    out: Linear,
    activation: Activation,
    input_dim: usize,
}

impl Body {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        channels: usize,
        kernel: usize,
        blocks: usize,
        activation: Activation,
        zero_out: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let convs = (0..blocks)
            .map(|i| {
                let c_in = if i == 0 { input_dim } else { channels };
                TemporalConv::new(store, &format!("{prefix}.conv{i}"), c_in, channels, kernel, rng)
            })
            .collect();
        let out = if zero_out {
            Linear::zeroed(store, &format!("{prefix}.out"), channels, 1)
        } else {
            Linear::new(store, &format!("{prefix}.out"), channels, 1, rng)
        };
        Self { convs, out, activation, input_dim }
    }

    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if x.shape().1 != self.input_dim {
            return Err(Error::Dimension(format!(
                "discriminator input has {} features per frame, expected {}",
                x.shape().1,
                self.input_dim
            )));
        }
        if x.shape().0 == 0 {
            return Err(Error::Length("discriminator input has no frames".into()));
        }
        let mut h = x;
        for conv in &self.convs {
            h = self.activation.apply(conv.forward(p, h));
        }
        Ok(self.out.forward(p, h.mean_rows()))
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub config: CriticConfig,
    body: Body,
}

impl Critic {
    /// Unbounded 1x1 score of a `T x 3K` sequence.
    pub fn score_var<'t>(&self, p: &Bound<'t>, seq: Var<'t>) -> Result<Var<'t>> {
        self.body.forward(p, seq)
    }
}

#[derive(Debug, Clone)]
pub struct IdentityDiscriminator {
    pub config: ConditionalDiscConfig,
    embed: Linear,
    body: Body,
}

impl IdentityDiscriminator {
    /// Probability (1x1) that `seq` is a real sequence of the identity whose
    /// neutral features (1 x 3K) are given.
    pub fn score_var<'t>(&self, p: &Bound<'t>, seq: Var<'t>, neutral_feat: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logit_var(p, seq, neutral_feat)?.sigmoid())
    }

    /// Pre-sigmoid output of [`Self::score_var`].
    pub fn logit_var<'t>(&self, p: &Bound<'t>, seq: Var<'t>, neutral_feat: Var<'t>) -> Result<Var<'t>> {
        if neutral_feat.shape() != (1, self.embed.fan_in) {
            return Err(Error::Dimension(format!(
                "neutral features are {:?}, expected 1x{}",
                neutral_feat.shape(),
                self.embed.fan_in
            )));
        }
        let t = seq.shape().0;
        let cond = self.embed.forward(p, neutral_feat).tanh().broadcast_rows(t);
        if seq.shape().1 + cond.shape().1 != self.body.input_dim {
            return Err(Error::Dimension(format!(
                "sequence has {} features per frame, expected {}",
                seq.shape().1,
                self.body.input_dim - cond.shape().1
            )));
        }
        self.body.forward(p, Var::concat_cols(&[seq, cond]))
    }
}

#[derive(Debug, Clone)]
pub struct CoherenceDiscriminator {
    pub config: ConditionalDiscConfig,
    body: Body,
}

impl CoherenceDiscriminator {
    /// Probability (1x1) that a `(T-1) x 3K` frame-difference sequence is real.
    pub fn score_var<'t>(&self, p: &Bound<'t>, diff: Var<'t>) -> Result<Var<'t>> {
        Ok(self.logit_var(p, diff)?.sigmoid())
    }

    /// Pre-sigmoid output of [`Self::score_var`].
    pub fn logit_var<'t>(&self, p: &Bound<'t>, diff: Var<'t>) -> Result<Var<'t>> {
        self.body.forward(p, diff)
    }
}

/// `x[t+1] - x[t]` over the rows of a `T x F` var.
pub fn temporal_diff_var(x: Var<'_>) -> Result<Var<'_>> {
    let t = x.shape().0;
    if t < 2 {
        return Err(Error::Length(format!("temporal difference needs at least 2 frames, got {t}")));
    }
    Ok(x.slice_rows(1, t - 1) - x.slice_rows(0, t - 1))
}

/// The three adversaries with one shared parameter store.
#[derive(Debug, Clone)]
pub struct Discriminators {
    k: usize,
    store: ParamStore,
    pub critic: Critic,
    pub identity: IdentityDiscriminator,
    pub coherence: CoherenceDiscriminator,
    disp_scale: f64,
    neutral_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    num_landmarks: usize,
    critic: CriticConfig,
    identity: ConditionalDiscConfig,
    coherence: ConditionalDiscConfig,
    seed: u64,
    disp_scale: f64,
    neutral_scale: f64,
}

impl Discriminators {
    pub fn new(
        num_landmarks: usize,
        critic: CriticConfig,
        identity: ConditionalDiscConfig,
        coherence: ConditionalDiscConfig,
        seed: u64,
    ) -> Result<Self> {
        critic.validate()?;
        identity.validate()?;
        coherence.validate()?;
        let f = 3 * num_landmarks;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &critic;
        let critic_body = Body::new(
            &mut store,
            "critic",
            f,
            c.channels,
            c.kernel_size,
            c.num_temporal_blocks,
            c.activation,
            c.zero_init_output,
            &mut rng,
        );
        let i = &identity;
        let embed = Linear::new(&mut store, "identity.embed", f, i.condition_dim, &mut rng);
        let identity_body = Body::new(
            &mut store,
            "identity",
            f + i.condition_dim,
            i.channels,
            i.kernel_size,
            i.num_temporal_blocks,
            i.activation,
            i.zero_init_output,
            &mut rng,
        );
        let h = &coherence;
        let coherence_body = Body::new(
            &mut store,
            "coherence",
            f,
            h.channels,
            h.kernel_size,
            h.num_temporal_blocks,
            h.activation,
            h.zero_init_output,
            &mut rng,
        );
        Ok(Self {
            k: num_landmarks,
            store,
            critic: Critic { config: critic, body: critic_body },
            identity: IdentityDiscriminator { config: identity, embed, body: identity_body },
            coherence: CoherenceDiscriminator { config: coherence, body: coherence_body },
            disp_scale: 1.0,
            neutral_scale: 100.0,
        })
    }

    pub fn num_landmarks(&self) -> usize {
        self.k
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Millimetres per unit of the displacement features the networks consume.
    pub fn set_scales(&mut self, disp_scale: f64, neutral_scale: f64) {
        self.disp_scale = disp_scale;
        self.neutral_scale = neutral_scale;
    }

    fn seq_matrix(&self, seq: &DisplacementSequence) -> Result<Matrix> {
        features::check_points("displacement sequence", seq.num_points(), self.k)?;
        Ok(frames_to_matrix(seq.frames(), self.disp_scale))
    }

    fn eval(&self, f: impl for<'t> FnOnce(&'t Tape, &Bound<'t>) -> Result<Var<'t>>) -> Result<f64> {
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let v = f(&tape, &p)?.item();
        if !v.is_finite() {
            return Err(Error::Numeric("discriminator output is not finite".into()));
        }
        Ok(v)
    }

    pub fn critic_score(&self, seq: &DisplacementSequence) -> Result<f64> {
        let x = self.seq_matrix(seq)?;
        self.eval(|tape, p| self.critic.score_var(p, tape.constant(x)))
    }

    pub fn identity_score(&self, seq: &DisplacementSequence, neutral: &LandmarkFrame) -> Result<f64> {
        let x = self.seq_matrix(seq)?;
        features::check_points("neutral landmark frame", neutral.num_points(), self.k)?;
        let nf = features::neutral_features(neutral, self.neutral_scale)?;
        self.eval(|tape, p| self.identity.score_var(p, tape.constant(x), tape.constant(nf)))
    }

    /// Score of an already differenced sequence (see `geometry::temporal_diff`).
    pub fn coherence_score(&self, diff: &DisplacementSequence) -> Result<f64> {
        let x = self.seq_matrix(diff)?;
        self.eval(|tape, p| self.coherence.score_var(p, tape.constant(x)))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let meta = Meta {
            num_landmarks: self.k,
            critic: self.critic.config.clone(),
            identity: self.identity.config.clone(),
            coherence: self.coherence.config.clone(),
            seed,
            disp_scale: self.disp_scale,
            neutral_scale: self.neutral_scale,
        };
        Checkpoint::new(CHECKPOINT_KIND, &meta, self.store.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND)?;
        let meta: Meta = ck.meta()?;
        let mut d = Self::new(meta.num_landmarks, meta.critic, meta.identity, meta.coherence, meta.seed)?;
        d.store.load_from(&ck.params).map_err(Error::Compatibility)?;
        d.set_scales(meta.disp_scale, meta.neutral_scale);
        Ok(d)
    }
}

fn check_batches(real: &[Var<'_>], fake: &[Var<'_>]) -> Result<()> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let shape = real[0].shape();
    if real.iter().chain(fake).any(|v| v.shape().1 != shape.1) {
        return Err(Error::Dimension("batch members have different feature widths".into()));
    }
    Ok(())
}

fn mean_of<'t>(xs: &[Var<'t>]) -> Var<'t> {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = acc + x;
    }
    acc * (1.0 / xs.len() as f64)
}

fn check_probs(ps: &[Var<'_>]) -> Result<()> {
    if ps.iter().any(|p| !p.item().is_finite()) {
        return Err(Error::Numeric("discriminator probability is not finite".into()));
    }
    Ok(())
}

fn clamped(p: Var<'_>) -> Var<'_> {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// mean(log p_real) + mean(log(1 - p_fake)), probabilities clamped.
pub fn log_pair_loss<'t>(real_probs: &[Var<'t>], fake_probs: &[Var<'t>]) -> Result<Var<'t>> {
    check_batches(real_probs, fake_probs)?;
    check_probs(real_probs)?;
    check_probs(fake_probs)?;
    let real: Vec<Var> = real_probs.iter().map(|&p| clamped(p).ln()).collect();
    let fake: Vec<Var> = fake_probs.iter().map(|&p| (-clamped(p)).shift(1.0).ln()).collect();
    Ok(mean_of(&real) + mean_of(&fake))
}

/// Non-saturating generator term: mean(-log p_fake).
pub fn generator_log_term<'t>(fake_probs: &[Var<'t>]) -> Result<Var<'t>> {
    if fake_probs.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    check_probs(fake_probs)?;
    let terms: Vec<Var> = fake_probs.iter().map(|&p| -clamped(p).ln()).collect();
    Ok(mean_of(&terms))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: Var<'_>) -> Var<'_> {
    let pos = x.leaky_relu(0.0);
    let abs = pos + (-x).leaky_relu(0.0);
    pos + (-abs).exp().shift(1.0).ln()
}

/// Non-saturating generator term from discriminator logits: mean(-log sigmoid(z)).
///
/// Equal to [`generator_log_term`] of the probabilities wherever the clamp is
/// inactive, but keeps a gradient when the discriminator is confident.
pub fn generator_logit_term<'t>(fake_logits: &[Var<'t>]) -> Result<Var<'t>> {
    if fake_logits.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    if fake_logits.iter().any(|z| !z.item().is_finite()) {
        return Err(Error::Numeric("discriminator logit is not finite".into()));
    }
    let terms: Vec<Var> = fake_logits.iter().map(|&z| softplus(-z)).collect();
    Ok(mean_of(&terms))
}

/// mean(score_real) - mean(score_fake); the critic ascends this.
pub fn wasserstein_term<'t>(real_scores: &[Var<'t>], fake_scores: &[Var<'t>]) -> Result<Var<'t>> {
    check_batches(real_scores, fake_scores)?;
    Ok(mean_of(real_scores) - mean_of(fake_scores))
}

/// Identity loss over a batch: real sequences paired with their own neutral
/// features, fake sequences paired with the neutral they were generated from.
pub fn loss_iden<'t>(
    d: &IdentityDiscriminator,
    p: &Bound<'t>,
    real: &[(Var<'t>, Var<'t>)],
    fake: &[(Var<'t>, Var<'t>)],
) -> Result<Var<'t>> {
    let rp = real.iter().map(|&(s, n)| d.score_var(p, s, n)).collect::<Result<Vec<_>>>()?;
    let fp = fake.iter().map(|&(s, n)| d.score_var(p, s, n)).collect::<Result<Vec<_>>>()?;
    log_pair_loss(&rp, &fp)
}

/// Coherence loss over the temporal differences of both batches.
pub fn loss_coh<'t>(d: &CoherenceDiscriminator, p: &Bound<'t>, real: &[Var<'t>], fake: &[Var<'t>]) -> Result<Var<'t>> {
    let rp = real.iter().map(|&s| d.score_var(p, temporal_diff_var(s)?)).collect::<Result<Vec<_>>>()?;
    let fp = fake.iter().map(|&s| d.score_var(p, temporal_diff_var(s)?)).collect::<Result<Vec<_>>>()?;
    log_pair_loss(&rp, &fp)
}

/// Mean over samples of `(||grad_x critic(x_hat)||_2 - 1)^2` with
/// `x_hat = eps * real + (1 - eps) * fake` and one uniform `eps` per sample.
/// The result stays differentiable in the critic's parameters.
pub fn gradient_penalty<'t, F>(critic: F, real: &[Var<'t>], fake: &[Var<'t>], rng: &mut impl Rng) -> Result<Var<'t>>
where
    F: Fn(Var<'t>) -> Result<Var<'t>>,
{
    check_batches(real, fake)?;
    if real.len() != fake.len() || real.iter().zip(fake).any(|(r, f)| r.shape() != f.shape()) {
        return Err(Error::Dimension("real and fake batches must have the same shape".into()));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (&r, &f) in real.iter().zip(fake) {
        let eps: f64 = rng.random();
        let x_hat = r * eps + f * (1.0 - eps);
        let score = critic(x_hat)?;
        let g = r.tape().grad(score, &[x_hat])[0];
        let norm = g.square().sum().shift(1e-16).sqrt();
        terms.push(norm.shift(-1.0).square());
    }
    Ok(mean_of(&terms))
}
