//! Training configuration (TOML).
//!
//! Every section and key is optional; omitted values take the defaults shown
//! by [`TrainingConfig::default_toml`]. Unknown keys are rejected.
//!
//! ```toml
//! version = 1
//! seed = 0
//!
//! [weights]          # generator loss weights and the gradient-penalty weight
//! adv = 1.0
//! iden = 1.0
//! coh = 1.0
//! rec = 10.0
//! gp = 10.0
//!
//! [ablation]
//! use_coh = true
//! use_iden = true
//! use_ae = true
//! use_attention = true
//!
//! [schedule]
//! level_steps = [600, 600, 600, 1500]   # one entry per generator level
//! critic_steps = 5
//! batch_size = 4
//! clip_len = 30
//! lr_g = 0.002
//! lr_d = 0.0001
//! beta1 = 0.5
//! beta2 = 0.9
//! decay_fraction = 0.8                 # learning rates drop by decay_factor after this share of steps
//! decay_factor = 0.1
//! adversarial_levels = "finest"        # or "all"
//!
//! [autoencoder]   # see AeConfig
//! [generator]     # see GeneratorConfig (num_levels must match level_steps)
//! [critic]        # see CriticConfig
//! [identity]      # see ConditionalDiscConfig
//! [coherence]     # see ConditionalDiscConfig
//! [decoder]       # see DecoderConfig
//! ```
//!
//! `weights.gp` is the gradient-penalty weight and `ablation.use_attention`
//! switches the decoder's attention; the matching keys inside `[critic]` and
//! `[decoder]` may only repeat those values.

use serde::{Deserialize, Serialize};

use crate::autoencoder::AeConfig;
use crate::decoder::DecoderConfig;
use crate::discriminators::{ConditionalDiscConfig, CriticConfig};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::nn::AdamConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub adv: f64,
    pub iden: f64,
    pub coh: f64,
    pub rec: f64,
    pub gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, iden: 1.0, coh: 1.0, rec: 10.0, gp: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub use_coh: bool,
    pub use_iden: bool,
    pub use_ae: bool,
    pub use_attention: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { use_coh: true, use_iden: true, use_ae: true, use_attention: true }
    }
}

impl Ablation {
    /// Table-style method name of this flag combination.
    pub fn method_name(&self) -> String {
        let mut off = Vec::new();
        if !self.use_coh {
            off.push("w/o L_coh");
        }
        if !self.use_iden {
            off.push("w/o L_iden");
        }
        if !self.use_ae {
            off.push("w/o AE");
        }
        if !self.use_attention {
            off.push("w/o atten");
        }
        if off.is_empty() {
            "full".to_string()
        } else {
            off.join(", ")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLevels {
    /// Adversaries train against the finest level only; coarser levels learn from reconstruction.
    #[default]
    Finest,
    /// Every level trains against a freshly initialized set of adversaries.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub level_steps: Vec<usize>,
    pub critic_steps: usize,
    pub batch_size: usize,
    pub clip_len: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Adam moment decay rates for generator levels and adversaries.
    pub beta1: f64,
    pub beta2: f64,
    /// Both learning rates are multiplied by `decay_factor` once this fraction of a level's steps is done.
    pub decay_fraction: f64,
    pub decay_factor: f64,
    pub adversarial_levels: AdversarialLevels,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            level_steps: vec![600, 600, 600, 1500],
            critic_steps: 5,
            batch_size: 4,
            clip_len: 30,
            lr_g: 2e-3,
            lr_d: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            decay_fraction: 0.8,
            decay_factor: 0.1,
            adversarial_levels: AdversarialLevels::Finest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub version: u32,
    pub seed: u64,
    pub weights: LossWeights,
    pub ablation: Ablation,
    pub schedule: Schedule,
    pub autoencoder: AeConfig,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub identity: ConditionalDiscConfig,
    pub coherence: ConditionalDiscConfig,
    pub decoder: DecoderConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            weights: LossWeights::default(),
            ablation: Ablation::default(),
            schedule: Schedule::default(),
            autoencoder: AeConfig { epochs: 3000, ..AeConfig::default() },
            generator: GeneratorConfig::default(),
            critic: CriticConfig::default(),
            identity: ConditionalDiscConfig::default(),
            coherence: ConditionalDiscConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| match crate::dataset::toml_error(text, &e) {
            Error::Parse { line, msg } => Error::Config(format!("line {line}: {msg}")),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    pub fn default_toml() -> String {
        Self::default().to_toml()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let w = &self.weights;
        for (name, v) in [("adv", w.adv), ("iden", w.iden), ("coh", w.coh), ("rec", w.rec), ("gp", w.gp)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("weights.{name} must be a finite non-negative number")));
            }
        }
        let s = &self.schedule;
        if s.level_steps.len() != self.generator.num_levels {
            return Err(Error::Config(format!(
                "schedule.level_steps has {} entries but generator.num_levels is {}",
                s.level_steps.len(),
                self.generator.num_levels
            )));
        }
        if s.level_steps.contains(&0) || s.critic_steps == 0 || s.batch_size == 0 {
            return Err(Error::Config("step counts and batch_size must be at least 1".into()));
        }
        if !(s.lr_g > 0.0 && s.lr_d > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !((0.0..1.0).contains(&s.beta1) && (0.0..1.0).contains(&s.beta2)) {
            return Err(Error::Config("schedule.beta1 and schedule.beta2 must lie in [0, 1)".into()));
        }
        if !((0.0..=1.0).contains(&s.decay_fraction) && s.decay_factor > 0.0) {
            return Err(Error::Config("decay_fraction must lie in [0, 1] and decay_factor must be positive".into()));
        }
        if s.clip_len < 2 {
            return Err(Error::Config("schedule.clip_len must be at least 2".into()));
        }
        let lengths = crate::generator::level_lengths(s.clip_len, self.generator.num_levels);
        if lengths.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Config(format!(
                "clip_len {} is too short for {} levels",
                s.clip_len, self.generator.num_levels
            )));
        }
        if self.critic.gradient_penalty_weight != CriticConfig::default().gradient_penalty_weight
            && self.critic.gradient_penalty_weight != w.gp
        {
            return Err(Error::Config("critic.gradient_penalty_weight conflicts with weights.gp".into()));
        }
        if !self.decoder.use_attention && self.ablation.use_attention {
            return Err(Error::Config("decoder.use_attention conflicts with ablation.use_attention".into()));
        }
        self.autoencoder.validate()?;
        self.generator.validate()?;
        self.critic.validate()?;
        self.identity.validate()?;
        self.coherence.validate()?;
        self.decoder.validate()
    }

    /// Seed for a named stage, derived from the run seed and the stage's own seed.
    pub fn stage_seed(&self, stage: &str, local: u64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in stage.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ local.rotate_left(17)
    }

    pub fn effective_autoencoder(&self) -> AeConfig {
        AeConfig { rng_seed: self.stage_seed("autoencoder", self.autoencoder.rng_seed), ..self.autoencoder.clone() }
    }

    pub fn effective_generator(&self) -> GeneratorConfig {
        GeneratorConfig { rng_seed: self.stage_seed("generator", self.generator.rng_seed), ..self.generator.clone() }
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.schedule.beta1, beta2: self.schedule.beta2, ..AdamConfig::default() }
    }

    /// First step of a `total`-step level that runs at the decayed learning rates.
    pub fn decay_step(&self, total: usize) -> usize {
        (self.schedule.decay_fraction * total as f64).ceil() as usize
    }

    pub fn effective_critic(&self) -> CriticConfig {
        CriticConfig { gradient_penalty_weight: self.weights.gp, ..self.critic.clone() }
    }

    pub fn effective_decoder(&self) -> DecoderConfig {
        DecoderConfig {
            use_attention: self.ablation.use_attention,
            rng_seed: self.stage_seed("decoder", self.decoder.rng_seed),
            ..self.decoder.clone()
        }
    }
}
