//! Staged training: landmark autoencoder, generator levels coarse to fine, then
//! the displacement decoder.
//!
//! Each generator level trains with its coarser levels frozen. A generator step
//! combines a reconstruction term with the adversarial terms; at levels where
//! adversaries are active, every generator step is preceded by `critic_steps`
//! updates of the critic and both discriminators. Adversaries are freshly
//! initialized for each level that uses them, so every stage depends only on
//! the dataset, the config and the checkpoints of earlier stages.
//!
//! Reconstruction uses one fixed noise map per training sequence at the
//! coarsest level and zero noise at every finer level.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autoencoder::{train_autoencoder, LandmarkAutoencoder};
use crate::autograd::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::config::{AdversarialLevels, TrainingConfig};
use crate::dataset::{global_scale, Dataset, SequenceRecord};
use crate::decoder::{evaluate_frames, split_frames, train_decoder_on, DisplacementDecoder};
use crate::discriminators::{self, generator_logit_term, temporal_diff_var, Discriminators};
use crate::error::{Error, Result};
use crate::features::{frames_to_matrix, rms_scale};
use crate::generator::{GeneratorStack, NoisePyramid};
use crate::geometry::{per_vertex_error, resample_time, DisplacementSequence, LandmarkFrame, PointSeries};
use crate::mesh_io;
use crate::nn::{grad_values, Adam, Bound};
use crate::pipeline::{self, decode_rebased};
use crate::tensor::Matrix;

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TIMING_FILE: &str = "timing.txt";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub step: usize,
    pub term: String,
    pub value: f64,
}

/// Loss traces, final metrics and (separately) wall-clock timings.
#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub entries: Vec<TraceEntry>,
    pub metrics: BTreeMap<String, f64>,
    /// Seconds per stage. Not part of the CSV or summary, which stay reproducible.
    pub timings: Vec<(String, f64)>,
}

impl TrainingReport {
    pub fn record(&mut self, step: usize, term: impl Into<String>, value: f64) {
        self.entries.push(TraceEntry { step, term: term.into(), value });
    }

    pub fn trace(&self, term: &str) -> Vec<f64> {
        self.entries.iter().filter(|e| e.term == term).map(|e| e.value).collect()
    }

    pub fn terms(&self) -> Vec<String> {
        let mut t: Vec<String> = self.entries.iter().map(|e| e.term.clone()).collect();
        t.sort();
        t.dedup();
        t
    }

    /// Keeps only entries whose term starts with one of `prefixes`.
    pub fn retain_stages(&mut self, prefixes: &[String]) {
        self.entries.retain(|e| prefixes.iter().any(|p| e.term.starts_with(p.as_str())));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,term,value\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.step, e.term, e.value);
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut report = Self::default();
        for (i, line) in text.lines().enumerate().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::data(path, format!("line {}: expected step,term,value", i + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let step = parts[0].parse().map_err(|_| bad())?;
            let value = parts[2].parse().map_err(|_| bad())?;
            report.record(step, parts[1], value);
        }
        Ok(report)
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for term in self.terms() {
            let t = self.trace(&term);
            let _ = writeln!(
                out,
                "{term}: steps={} first={} last={}",
                t.len(),
                t.first().copied().unwrap_or(0.0),
                t.last().copied().unwrap_or(0.0)
            );
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "metric.{k} = {v}");
        }
        out
    }

    pub fn timing_text(&self) -> String {
        self.timings.iter().map(|(s, t)| format!("{s} {t:.3}s\n")).collect()
    }
}

/// Weighted contributions of each generator loss term; they sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub adv: f64,
    pub iden: f64,
    pub coh: f64,
    pub rec: f64,
    pub total: f64,
}

pub struct GeneratorLoss<'t> {
    pub total: Var<'t>,
    pub breakdown: LossBreakdown,
}

/// Mean squared difference of two equally shaped vars.
pub fn mse_var<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    Ok((a - b).square().mean())
}

/// Mean squared error over frames, points and coordinates (mm²).
pub fn reconstruction_loss(fake_rec: &DisplacementSequence, real: &DisplacementSequence) -> Result<f64> {
    let (a, b) = (fake_rec.frames(), real.frames());
    if a.len() != b.len() || fake_rec.num_points() != real.num_points() {
        return Err(Error::Dimension(format!(
            "reconstruction is {}x{}, target is {}x{}",
            a.len(),
            fake_rec.num_points(),
            b.len(),
            real.num_points()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (fa, fb) in a.iter().zip(b) {
        for (p, q) in fa.iter().zip(fb) {
            for k in 0..3 {
                sum += (p[k] - q[k]) * (p[k] - q[k]);
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// `adv * (-critic(fake)) + iden * (-log D_iden(fake, LM)) + coh * (-log D_coh(dif(fake))) + rec * mse`.
///
/// `fake` pairs each generated sequence with the neutral features it was
/// generated from; `rec` pairs reconstructions with their targets. Adversarial
/// terms are exactly zero when `adversaries` is None, when their ablation flag
/// is off or when their weight is zero.
pub fn total_generator_loss<'t>(
    adversaries: Option<(&Discriminators, &Bound<'t>)>,
    fake: &[(Var<'t>, Var<'t>)],
    rec: &[(Var<'t>, Var<'t>)],
    cfg: &TrainingConfig,
) -> Result<GeneratorLoss<'t>> {
    let w = &cfg.weights;
    let mut parts: Vec<Var<'t>> = Vec::new();
    let mut b = LossBreakdown::default();
    if let Some((d, p)) = adversaries {
        if fake.is_empty() {
            return Err(Error::Usage("adversarial terms need at least one generated sequence".into()));
        }
        if w.adv > 0.0 {
            let scores = fake.iter().map(|&(s, _)| d.critic.score_var(p, s)).collect::<Result<Vec<_>>>()?;
            let mut sum = scores[0];
            for &s in &scores[1..] {
                sum = sum + s;
            }
            let term = sum * (-w.adv / scores.len() as f64);
            b.adv = term.item();
            parts.push(term);
        }
        if cfg.ablation.use_iden && w.iden > 0.0 {
            let logits = fake.iter().map(|&(s, n)| d.identity.logit_var(p, s, n)).collect::<Result<Vec<_>>>()?;
            let term = generator_logit_term(&logits)? * w.iden;
            b.iden = term.item();
            parts.push(term);
        }
        if cfg.ablation.use_coh && w.coh > 0.0 {
            let logits = fake
                .iter()
                .map(|&(s, _)| d.coherence.logit_var(p, temporal_diff_var(s)?))
                .collect::<Result<Vec<_>>>()?;
            let term = generator_logit_term(&logits)? * w.coh;
            b.coh = term.item();
            parts.push(term);
        }
    }
    if w.rec > 0.0 && !rec.is_empty() {
        let mut sum = mse_var(rec[0].0, rec[0].1)?;
        for &(a, t) in &rec[1..] {
            sum = sum + mse_var(a, t)?;
        }
        let term = sum * (w.rec / rec.len() as f64);
        b.rec = term.item();
        parts.push(term);
    }
    let total = match parts.split_first() {
        Some((&first, rest)) => rest.iter().fold(first, |acc, &x| acc + x),
        None => {
            let tape = fake.first().or(rec.first()).map(|(v, _)| v.tape());
            let tape = tape.ok_or_else(|| Error::Usage("generator loss has no inputs".into()))?;
            tape.scalar(0.0)
        }
    };
    b.total = total.item();
    if !b.total.is_finite() {
        return Err(Error::Numeric("generator loss is not finite".into()));
    }
    Ok(GeneratorLoss { total, breakdown: b })
}

/// Training sequences in network units, shared by all levels.
pub struct TrainingSet {
    pub records: Vec<SequenceRecord>,
    pub neutral_landmarks: Vec<LandmarkFrame>,
    /// Landmark displacements (mm) at the clip length.
    pub landmark_disp: Vec<DisplacementSequence>,
    pub neutral_scale: f64,
}

impl TrainingSet {
    pub fn new(data: &Dataset, clip_len: usize) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Usage("dataset has no sequences".into()));
        }
        let records = data.records.iter().map(|r| r.resampled(clip_len)).collect::<Result<Vec<_>>>()?;
        let neutral_landmarks =
            records.iter().map(|r| r.neutral_landmarks(&data.landmarks)).collect::<Result<Vec<_>>>()?;
        let landmark_disp =
            records.iter().map(|r| r.landmark_displacements(&data.landmarks)).collect::<Result<Vec<_>>>()?;
        Ok(Self { neutral_scale: global_scale(&records), records, neutral_landmarks, landmark_disp })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn landmark_frames(&self) -> Vec<Vec<[f64; 3]>> {
        self.landmark_disp.iter().flat_map(|s| s.frames().iter().cloned()).collect()
    }
}

/// Fixed coarsest-level noise used to reconstruct training sequence `index`.
pub fn reconstruction_noise(cfg: &TrainingConfig, stack: &GeneratorStack, index: usize) -> NoisePyramid {
    let lengths = stack.training_lengths();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed("reconstruction", index as u64));
    let std = stack.config().base_noise_std;
    let first = Matrix::from_fn(lengths[0], stack.channels(), |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        std * z
    });
    NoisePyramid::anchored(first, &lengths, stack.channels())
}

struct LevelInputs {
    reals: Vec<Matrix>,
    neutrals: Vec<Matrix>,
    rec_noise: Vec<NoisePyramid>,
}

fn level_inputs(set: &TrainingSet, stack: &GeneratorStack, cfg: &TrainingConfig, level: usize) -> Result<LevelInputs> {
    let t = stack.training_lengths()[level];
    let reals = set
        .landmark_disp
        .iter()
        .map(|s| Ok(frames_to_matrix(resample_time(s, t)?.frames(), stack.disp_scale())))
        .collect::<Result<Vec<_>>>()?;
    let neutrals = set.neutral_landmarks.iter().map(|n| stack.neutral_features(n)).collect::<Result<Vec<_>>>()?;
    let rec_noise = (0..set.len()).map(|i| reconstruction_noise(cfg, stack, i)).collect();
    Ok(LevelInputs { reals, neutrals, rec_noise })
}

fn sample_batch(n: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if size < n {
        idx.shuffle(rng);
        idx.truncate(size);
        idx.sort_unstable();
    }
    idx
}

fn sample_noise(stack: &GeneratorStack, level: usize, rng: &mut ChaCha8Rng) -> NoisePyramid {
    let lengths = &stack.training_lengths()[..=level];
    NoisePyramid::sample(lengths, stack.channels(), stack.config(), rng)
}

/// Places every level's and the autoencoder's parameters on `tape`.
fn bind_stack<'t>(stack: &GeneratorStack, tape: &'t Tape) -> (Vec<Bound<'t>>, Option<Bound<'t>>) {
    let bounds = stack.levels().iter().map(|l| l.params().bind(tape)).collect();
    let ae = stack.autoencoder().map(|ae| ae.params().bind(tape));
    (bounds, ae)
}

fn generate_var<'t>(
    stack: &GeneratorStack,
    bounds: &[Bound<'t>],
    ae: Option<&Bound<'t>>,
    level: usize,
    noise: &NoisePyramid,
    neutral: Var<'t>,
) -> Result<Var<'t>> {
    let tape = neutral.tape();
    let noise: Vec<Var> = noise.levels[..=level].iter().map(|m| tape.constant(m.clone())).collect();
    let codes = stack.forward_codes(bounds, level, &noise, neutral)?;
    Ok(stack.displacement_features(ae, codes))
}

fn uses_adversaries(cfg: &TrainingConfig, level: usize, num_levels: usize) -> bool {
    match cfg.schedule.adversarial_levels {
        AdversarialLevels::All => true,
        AdversarialLevels::Finest => level + 1 == num_levels,
    }
}

pub fn new_adversaries(cfg: &TrainingConfig, stack: &GeneratorStack, level: usize) -> Result<Discriminators> {
    let mut d = Discriminators::new(
        stack.num_landmarks(),
        cfg.effective_critic(),
        cfg.identity.clone(),
        cfg.coherence.clone(),
        cfg.stage_seed("adversaries", level as u64),
    )?;
    d.set_scales(stack.disp_scale(), stack.neutral_scale());
    Ok(d)
}

/// One adversary update; returns (wasserstein estimate, penalty, loss_iden, loss_coh).
fn adversary_step(
    d: &mut Discriminators,
    opt: &mut Adam,
    stack: &GeneratorStack,
    inputs: &LevelInputs,
    cfg: &TrainingConfig,
    level: usize,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 4]> {
    let batch = sample_batch(inputs.reals.len(), cfg.schedule.batch_size, rng);
    let tape = Tape::new();
    let (bounds, ae) = bind_stack(stack, &tape);
    let p = d.params().bind(&tape);
    let mut real = Vec::new();
    let mut fake = Vec::new();
    for &i in &batch {
        let n = tape.constant(inputs.neutrals[i].clone());
        let noise = sample_noise(stack, level, rng);
        let f = generate_var(stack, &bounds, ae.as_ref(), level, &noise, n)?.detach();
        real.push((tape.constant(inputs.reals[i].clone()), n));
        fake.push((f, n));
    }
    let real_seq: Vec<Var> = real.iter().map(|r| r.0).collect();
    let fake_seq: Vec<Var> = fake.iter().map(|f| f.0).collect();
    let rs = real_seq.iter().map(|&s| d.critic.score_var(&p, s)).collect::<Result<Vec<_>>>()?;
    let fs = fake_seq.iter().map(|&s| d.critic.score_var(&p, s)).collect::<Result<Vec<_>>>()?;
    let wdist = discriminators::wasserstein_term(&rs, &fs)?;
    let gp = discriminators::gradient_penalty(|x| d.critic.score_var(&p, x), &real_seq, &fake_seq, rng)?;
    let mut loss = -wdist + gp * cfg.weights.gp;
    let mut iden = 0.0;
    if cfg.ablation.use_iden {
        let l = discriminators::loss_iden(&d.identity, &p, &real, &fake)?;
        iden = l.item();
        loss = loss - l;
    }
    let mut coh = 0.0;
    if cfg.ablation.use_coh {
        let l = discriminators::loss_coh(&d.coherence, &p, &real_seq, &fake_seq)?;
        coh = l.item();
        loss = loss - l;
    }
    if !loss.item().is_finite() {
        return Err(Error::Numeric(format!("adversary loss at level {level} is not finite")));
    }
    let grads = grad_values(&tape.grad(loss, p.vars()));
    let out = [wdist.item(), gp.item(), iden, coh];
    drop(p);
    opt.step(d.params_mut(), &grads);
    Ok(out)
}

/// Trains one generator level with all coarser levels frozen and appends its
/// traces to `report` under `level{l}.*`.
pub fn train_level(
    stack: &mut GeneratorStack,
    level: usize,
    set: &TrainingSet,
    cfg: &TrainingConfig,
    report: &mut TrainingReport,
) -> Result<()> {
    if level >= stack.num_levels() {
        return Err(Error::Usage(format!("level {level} does not exist")));
    }
    if stack.trained_levels() != level {
        return Err(Error::State(format!(
            "level {level} cannot train: {} levels are trained",
            stack.trained_levels()
        )));
    }
    let inputs = level_inputs(set, stack, cfg, level)?;
    let adversarial = uses_adversaries(cfg, level, stack.num_levels());
    let mut adversaries = if adversarial { Some(new_adversaries(cfg, stack, level)?) } else { None };
    let mut d_opt = adversaries.as_ref().map(|d| Adam::new(cfg.adam(cfg.schedule.lr_d), d.params()));
    let mut g_opt = Adam::new(cfg.adam(cfg.schedule.lr_g), stack.levels()[level].params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed("level", level as u64));
    let scale2 = stack.disp_scale() * stack.disp_scale();
    let name = |t: &str| format!("level{level}.{t}");

    let total_steps = cfg.schedule.level_steps[level];
    for step in 0..total_steps {
        if step == cfg.decay_step(total_steps) {
            g_opt.set_lr(g_opt.lr() * cfg.schedule.decay_factor);
            if let Some(opt) = d_opt.as_mut() {
                opt.set_lr(opt.lr() * cfg.schedule.decay_factor);
            }
        }
        let mut adv_stats = [0.0; 4];
        if let (Some(d), Some(opt)) = (adversaries.as_mut(), d_opt.as_mut()) {
            for _ in 0..cfg.schedule.critic_steps {
                adv_stats = adversary_step(d, opt, stack, &inputs, cfg, level, &mut rng)?;
            }
        }
        let batch = sample_batch(inputs.reals.len(), cfg.schedule.batch_size, &mut rng);
        let (grads, breakdown, rec_mm2) = {
            let tape = Tape::new();
            let (bounds, ae) = bind_stack(stack, &tape);
            let dp = adversaries.as_ref().map(|d| d.params().bind(&tape));
            let mut fake = Vec::new();
            let mut rec = Vec::new();
            for &i in &batch {
                let n = tape.constant(inputs.neutrals[i].clone());
                let noise = sample_noise(stack, level, &mut rng);
                fake.push((generate_var(stack, &bounds, ae.as_ref(), level, &noise, n)?, n));
                let r = generate_var(stack, &bounds, ae.as_ref(), level, &inputs.rec_noise[i], n)?;
                rec.push((r, tape.constant(inputs.reals[i].clone())));
            }
            let adv = adversaries.as_ref().zip(dp.as_ref());
            let loss = total_generator_loss(adv, &fake, &rec, cfg)?;
            let mut rec_sum = 0.0;
            for &(a, b) in &rec {
                rec_sum += mse_var(a, b)?.item();
            }
            let grads = grad_values(&tape.grad(loss.total, bounds[level].vars()));
            (grads, loss.breakdown, rec_sum / rec.len() as f64 * scale2)
        };
        g_opt.step(stack.level_mut(level).params_mut(), &grads);

        report.record(step, name("adv"), breakdown.adv);
        report.record(step, name("iden"), breakdown.iden);
        report.record(step, name("coh"), breakdown.coh);
        report.record(step, name("rec"), breakdown.rec);
        report.record(step, name("total"), breakdown.total);
        report.record(step, name("rec_mm2"), rec_mm2);
        report.record(step, name("critic_wdist"), adv_stats[0]);
        report.record(step, name("critic_gp"), adv_stats[1]);
        report.record(step, name("loss_iden"), adv_stats[2]);
        report.record(step, name("loss_coh"), adv_stats[3]);
    }
    stack.mark_level_trained(level)
}

/// Per-vertex errors (0.1 mm) of reconstructions of every training sequence:
/// (landmark error, mesh error after decoding).
pub fn reconstruction_errors(
    stack: &GeneratorStack,
    decoder: &DisplacementDecoder,
    set: &TrainingSet,
    cfg: &TrainingConfig,
) -> Result<(f64, f64)> {
    let (mut lm_err, mut mesh_err) = (0.0, 0.0);
    for i in 0..set.len() {
        let noise = reconstruction_noise(cfg, stack, i);
        let neutral = &set.neutral_landmarks[i];
        let lm = stack.generate_with_noise(neutral, &noise)?;
        lm_err += per_vertex_error(&lm, &set.landmark_disp[i])?;
        let mesh = decode_rebased(decoder, &lm, neutral)?;
        mesh_err += per_vertex_error(&mesh, &set.records[i].mesh_displacements()?)?;
    }
    let n = set.len() as f64;
    Ok((lm_err / n, mesh_err / n))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where checkpoints and reports are written; nothing is written when None.
    pub out_dir: Option<PathBuf>,
    /// Load stages whose checkpoint already exists in `out_dir` instead of retraining them.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub autoencoder: Option<LandmarkAutoencoder>,
    pub stack: GeneratorStack,
    pub decoder: DisplacementDecoder,
    pub report: TrainingReport,
    /// Stage checkpoints in training order.
    pub checkpoints: Vec<Checkpoint>,
    /// Files written for those checkpoints (empty without an output directory).
    pub checkpoint_paths: Vec<PathBuf>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Stages<'a> {
    opts: &'a RunOptions,
    checkpoints: Vec<Checkpoint>,
    paths: Vec<PathBuf>,
    resumed: Vec<String>,
}

impl Stages<'_> {
    fn existing(&self, file: &str) -> Result<Option<Checkpoint>> {
        match &self.opts.out_dir {
            Some(dir) if self.opts.resume && dir.join(file).exists() => Ok(Some(Checkpoint::load(&dir.join(file))?)),
            _ => Ok(None),
        }
    }

    fn finish(&mut self, file: &str, ck: Checkpoint, report: &TrainingReport) -> Result<()> {
        if let Some(dir) = &self.opts.out_dir {
            let path = dir.join(file);
            write_atomic(&path, &ck.to_bytes())?;
            write_atomic(&dir.join(REPORT_FILE), report.to_csv().as_bytes())?;
            self.paths.push(path);
        }
        self.checkpoints.push(ck);
        Ok(())
    }
}

/// Trains every stage and evaluates the result. With an output directory the
/// checkpoints, `landmarks.txt`, the config and the reports are written there.
pub fn run_full_training(data: &Dataset, cfg: &TrainingConfig, opts: &RunOptions) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let set = TrainingSet::new(data, cfg.schedule.clip_len)?;
    let k = data.num_landmarks();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mesh_io::write_landmark_indices(&dir.join(pipeline::LANDMARKS_FILE), &data.landmarks)?;
        write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;
    }
    let mut report = TrainingReport::default();
    let mut previous = None;
    if let (Some(dir), true) = (&opts.out_dir, opts.resume) {
        let path = dir.join(REPORT_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            previous = Some(TrainingReport::from_csv(&text, &path)?);
        }
    }
    let mut stages = Stages { opts, checkpoints: Vec::new(), paths: Vec::new(), resumed: Vec::new() };

    // autoencoder
    let ae = if cfg.ablation.use_ae {
        let clock = Instant::now();
        let model = match stages.existing(pipeline::AUTOENCODER_FILE)? {
            Some(ck) => {
                stages.resumed.push("ae.".into());
                LandmarkAutoencoder::from_checkpoint(&ck)?
            }
            None => {
                let trained = train_autoencoder(&set.landmark_frames(), &cfg.effective_autoencoder())?;
                for (e, v) in trained.loss_curve.iter().enumerate() {
                    report.record(e, "ae.rec_mm2", *v);
                }
                trained.model
            }
        };
        stages.finish(pipeline::AUTOENCODER_FILE, model.to_checkpoint()?, &report)?;
        report.timings.push(("autoencoder".into(), clock.elapsed().as_secs_f64()));
        Some(model)
    } else {
        None
    };

    // generator levels
    let mut stack = GeneratorStack::new(k, cfg.effective_generator(), cfg.schedule.clip_len, ae.clone())?;
    stack.set_neutral_scale(set.neutral_scale);
    if ae.is_none() {
        stack.set_disp_scale(rms_scale(set.landmark_frames().iter()))?;
    }
    for level in 0..stack.num_levels() {
        let clock = Instant::now();
        let file = pipeline::level_file(level);
        match stages.existing(&file)? {
            Some(ck) => {
                stages.resumed.push(format!("level{level}."));
                stack.load_level(level, &ck)?;
            }
            None => train_level(&mut stack, level, &set, cfg, &mut report)?,
        }
        stages.finish(&file, stack.level_checkpoint(level)?, &report)?;
        report.timings.push((format!("level{level}"), clock.elapsed().as_secs_f64()));
    }

    // decoder
    let clock = Instant::now();
    let dcfg = cfg.effective_decoder();
    let (train_frames, held_frames) = split_frames(data, dcfg.holdout_every)?;
    let decoder = match stages.existing(pipeline::DECODER_FILE)? {
        Some(ck) => {
            stages.resumed.push("decoder.".into());
            DisplacementDecoder::from_checkpoint(&ck)?
        }
        None => {
            let trained = train_decoder_on(&train_frames, &held_frames, set.neutral_scale, &dcfg)?;
            for (e, v) in trained.loss_curve.iter().enumerate() {
                report.record(e, "decoder.mse_mm2", *v);
            }
            trained.model
        }
    };
    stages.finish(pipeline::DECODER_FILE, decoder.to_checkpoint()?, &report)?;
    report.timings.push(("decoder".into(), clock.elapsed().as_secs_f64()));

    // traces of resumed stages come from the earlier run's report
    if let Some(mut prev) = previous {
        prev.retain_stages(&stages.resumed);
        let mut merged = Vec::new();
        let order: Vec<String> = std::iter::once("ae.".to_string())
            .chain((0..stack.num_levels()).map(|l| format!("level{l}.")))
            .chain(std::iter::once("decoder.".to_string()))
            .collect();
        for prefix in &order {
            let src = if stages.resumed.contains(prefix) { &prev.entries } else { &report.entries };
            merged.extend(src.iter().filter(|e| e.term.starts_with(prefix.as_str())).cloned());
        }
        report.entries = merged;
    }

    // evaluation
    report.metrics.insert("decoder_train_error".into(), evaluate_frames(&decoder, &train_frames)?);
    if !held_frames.is_empty() {
        report.metrics.insert("decoder_heldout_error".into(), evaluate_frames(&decoder, &held_frames)?);
    }
    let (lm_err, mesh_err) = reconstruction_errors(&stack, &decoder, &set, cfg)?;
    report.metrics.insert("generated_landmark_error".into(), lm_err);
    report.metrics.insert("generated_mesh_error".into(), mesh_err);
    if let Some(ae) = &ae {
        report.metrics.insert("autoencoder_rec_mm2".into(), ae.reconstruction_mse(&set.landmark_frames()));
    }
    if report.entries.iter().any(|e| !e.value.is_finite()) {
        return Err(Error::Numeric("a loss trace contains a non-finite value".into()));
    }

    if let Some(dir) = &opts.out_dir {
        write_atomic(&dir.join(REPORT_FILE), report.to_csv().as_bytes())?;
        write_atomic(&dir.join(SUMMARY_FILE), report.summary().as_bytes())?;
        write_atomic(&dir.join(TIMING_FILE), report.timing_text().as_bytes())?;
    }
    Ok(TrainingOutcome {
        autoencoder: ae,
        stack,
        decoder,
        report,
        checkpoints: stages.checkpoints,
        checkpoint_paths: stages.paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Space;

    #[test]
    fn reconstruction_loss_examples() {
        let a = DisplacementSequence::new(vec![vec![[0.0; 3]; 2]; 3], Space::Landmark).unwrap();
        let b = DisplacementSequence::new(vec![vec![[1.0; 3]; 2]; 3], Space::Landmark).unwrap();
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), 1.0);
        assert_eq!(reconstruction_loss(&b, &a).unwrap(), 1.0);
        let c = DisplacementSequence::new(vec![vec![[1.0; 3]; 2]; 2], Space::Landmark).unwrap();
        assert!(matches!(reconstruction_loss(&a, &c), Err(Error::Dimension(_))));
    }

    #[test]
    fn report_csv_round_trip() {
        let mut r = TrainingReport::default();
        r.record(0, "level0.rec", 0.125);
        r.record(1, "level0.rec", 1e-17);
        let back = TrainingReport::from_csv(&r.to_csv(), Path::new("r.csv")).unwrap();
        assert_eq!(back.entries, r.entries);
        assert_eq!(r.trace("level0.rec"), vec![0.125, 1e-17]);
    }
}
