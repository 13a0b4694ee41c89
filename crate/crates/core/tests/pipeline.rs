mod common;

use std::fs;

use face4d::config::TrainingConfig;
use face4d::dataset::{generate_synthetic, SyntheticSpec};
use face4d::generator::GeneratorStack;
use face4d::geometry::{apply_displacements, PointSeries};
use face4d::pipeline::{self, TrainedModel};
use face4d::training::{run_full_training, train_level, RunOptions, TrainingReport, TrainingSet, REPORT_FILE};
use face4d::Error;

fn data() -> face4d::dataset::Dataset {
    generate_synthetic(&SyntheticSpec::default()).unwrap().dataset
}

fn all_zero(report: &TrainingReport, suffix: &str) -> bool {
    let terms: Vec<String> = report.terms().into_iter().filter(|t| t.ends_with(suffix)).collect();
    assert!(!terms.is_empty(), "no {suffix} traces");
    terms.iter().all(|t| report.trace(t).iter().all(|&v| v == 0.0))
}

#[test]
fn full_run_writes_one_checkpoint_per_stage() {
    let cfg = common::quick_config();
    let out = run_full_training(&data(), &cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.checkpoints.len(), 1 + cfg.generator.num_levels + 1);
    assert!(out.report.entries.iter().all(|e| e.value.is_finite()));
    for key in ["decoder_train_error", "decoder_heldout_error", "generated_mesh_error", "generated_landmark_error"] {
        assert!(out.report.metrics[key].is_finite(), "{key}");
    }
}

#[test]
fn coherence_switch_zeroes_its_traces() {
    let mut cfg = common::quick_config();
    cfg.ablation.use_coh = false;
    let out = run_full_training(&data(), &cfg, &RunOptions::default()).unwrap();
    assert!(all_zero(&out.report, ".coh"));
    assert!(all_zero(&out.report, ".loss_coh"));
    assert!(!all_zero(&out.report, ".iden"));
}

#[test]
fn identity_switch_zeroes_its_traces() {
    let mut cfg = common::quick_config();
    cfg.ablation.use_iden = false;
    let out = run_full_training(&data(), &cfg, &RunOptions::default()).unwrap();
    assert!(all_zero(&out.report, ".iden"));
    assert!(all_zero(&out.report, ".loss_iden"));
    assert!(!all_zero(&out.report, ".coh"));
}

#[test]
fn autoencoder_switch_removes_the_stage() {
    let mut cfg = common::quick_config();
    cfg.ablation.use_ae = false;
    let out = run_full_training(&data(), &cfg, &RunOptions::default()).unwrap();
    assert!(out.autoencoder.is_none());
    assert!(!out.stack.uses_autoencoder());
    assert_eq!(out.checkpoints.len(), cfg.generator.num_levels + 1);
    assert!(out.report.terms().iter().all(|t| !t.starts_with("ae.")));
}

#[test]
fn attention_switch_reaches_the_decoder() {
    let mut cfg = common::quick_config();
    cfg.ablation.use_attention = false;
    let out = run_full_training(&data(), &cfg, &RunOptions::default()).unwrap();
    assert!(!out.decoder.config().use_attention);
    assert_eq!(cfg.ablation.method_name(), "w/o atten");
}

#[test]
fn identical_runs_are_bit_identical() {
    let cfg = common::quick_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let data = data();
    run_full_training(&data, &cfg, &RunOptions { out_dir: Some(a.path().into()), resume: false }).unwrap();
    run_full_training(&data, &cfg, &RunOptions { out_dir: Some(b.path().into()), resume: false }).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        if name == "timing.txt" {
            continue;
        }
        assert_eq!(fs::read(a.path().join(&name)).unwrap(), fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn resume_continues_from_the_last_finished_stage() {
    let cfg = common::quick_config();
    let data = data();
    let full = tempfile::tempdir().unwrap();
    run_full_training(&data, &cfg, &RunOptions { out_dir: Some(full.path().into()), resume: false }).unwrap();

    // an interrupted run that got as far as level 1
    let part = tempfile::tempdir().unwrap();
    for f in ["autoencoder.ckpt", "level0.ckpt", "level1.ckpt", REPORT_FILE] {
        fs::copy(full.path().join(f), part.path().join(f)).unwrap();
    }
    let resumed = run_full_training(&data, &cfg, &RunOptions { out_dir: Some(part.path().into()), resume: true }).unwrap();
    for f in ["level2.ckpt", "level3.ckpt", "decoder.ckpt", REPORT_FILE, "summary.txt"] {
        assert_eq!(fs::read(full.path().join(f)).unwrap(), fs::read(part.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(resumed.checkpoints.len(), 6);
}

#[test]
fn training_a_level_leaves_coarser_levels_alone() {
    let cfg = common::quick_config();
    let data = data();
    let set = TrainingSet::new(&data, 30).unwrap();
    let mut stack = GeneratorStack::new(data.num_landmarks(), cfg.effective_generator(), 30, None).unwrap();
    stack.set_neutral_scale(set.neutral_scale);
    stack.set_disp_scale(1.0).unwrap();
    let mut report = TrainingReport::default();
    train_level(&mut stack, 0, &set, &cfg, &mut report).unwrap();
    let frozen = stack.levels()[0].params().clone();
    train_level(&mut stack, 1, &set, &cfg, &mut report).unwrap();
    assert_eq!(stack.levels()[0].params(), &frozen);
    assert!(matches!(train_level(&mut stack, 3, &set, &cfg, &mut report), Err(Error::State(_))));
}

#[test]
fn trained_model_synthesizes_from_disk() {
    let mut cfg = common::quick_config();
    cfg.seed = 4;
    let data = data();
    let dir = tempfile::tempdir().unwrap();
    run_full_training(&data, &cfg, &RunOptions { out_dir: Some(dir.path().into()), resume: false }).unwrap();
    let model = TrainedModel::load(dir.path()).unwrap();
    let neutral = &data.records[0].neutral;
    let s = model.synthesize(neutral, 45, 1).unwrap();
    assert_eq!(s.meshes.frames.len(), 45);
    assert_eq!(s.meshes.frames[0], neutral.vertices);
    assert_eq!(s.landmark_disp.num_frames(), 45);
    assert_eq!(apply_displacements(neutral, &s.mesh_disp).unwrap(), s.meshes);
    assert_eq!(s, model.synthesize(neutral, 45, 1).unwrap());

    let mut small = neutral.clone();
    small.vertices.pop();
    small.faces.retain(|f| f.iter().all(|&i| (i as usize) < small.vertices.len()));
    assert!(matches!(model.synthesize(&small, 30, 0), Err(Error::Compatibility(_))));

    fs::remove_file(dir.path().join(pipeline::DECODER_FILE)).unwrap();
    assert!(matches!(TrainedModel::load(dir.path()), Err(Error::NotFound(_))));
}

#[test]
fn unknown_config_key_is_named() {
    let err = TrainingConfig::from_toml("[schedule]\nlevel_stepz = [1]\n").unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("level_stepz") && m.contains("line 2")), "{err}");
}
