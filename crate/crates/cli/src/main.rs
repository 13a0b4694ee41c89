use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use sha2::{Digest, Sha256};

use face4d::config::TrainingConfig;
use face4d::dataset::{self, Dataset, SyntheticSpec};
use face4d::geometry::{extract_landmark_sequence, per_vertex_error};
use face4d::pipeline::{self, TrainedModel};
use face4d::training::{self, RunOptions};
use face4d::{mesh_io, Error, Result};

const MANIFEST_FILE: &str = "manifest.txt";
const CACHE_FILE: &str = "dataset.cache";
const TRAJECTORY_FILE: &str = "landmarks_trajectory.txt";

#[derive(Parser)]
#[command(name = "face4d", version, about = "Landmark-driven 4D facial expression synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (mesh tree, landmark indices, binary cache).
    SynthData {
        /// TOML synthetic-data spec; the built-in default when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every stage and write checkpoints plus the loss report.
    Train {
        /// TOML training config; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory (a `dataset.cache` there is used when present).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse stage checkpoints already present in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Synthesize an expression sequence for a neutral mesh.
    Generate {
        /// Training output directory.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        neutral: PathBuf,
        #[arg(long, default_value_t = 30)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sequence landmark and mesh errors (0.1 mm) as CSV.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Landmark index file.
        #[arg(long)]
        landmarks: PathBuf,
        /// Value of the `method` column.
        #[arg(long, default_value = "model")]
        method: String,
        /// Write the CSV (and a manifest next to it) instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_manifest(path: &Path, command: &str, config_text: &str, seed: u64, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!(
        "command={command}\nversion={}\nconfig_sha256={}\nseed={seed}\n",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(config_text.as_bytes())
    );
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn synth_data(spec: Option<&Path>, out: &Path) -> Result<()> {
    let spec = match spec {
        Some(p) => SyntheticSpec::from_toml(&read_text(p)?)?,
        None => SyntheticSpec::default(),
    };
    let data = dataset::generate_synthetic(&spec)?.dataset;
    dataset::write_dataset_tree(out, &data)?;
    dataset::write_cache(&out.join(CACHE_FILE), &data)?;
    write_manifest(&out.join(MANIFEST_FILE), "synth-data", &spec.to_toml(), spec.rng_seed, &[])?;
    println!("{}", data.summary());
    Ok(())
}

fn load_training_data(dir: &Path, clip_len: usize) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::NotFound(format!("data directory {}", dir.display())));
    }
    let cache = dir.join(CACHE_FILE);
    if cache.exists() {
        info!("reading {}", cache.display());
        return dataset::read_cache(&cache);
    }
    dataset::load_dataset(dir, &dir.join(pipeline::LANDMARKS_FILE), clip_len)
}

fn train(config: Option<&Path>, data: &Path, out: &Path, resume: bool) -> Result<()> {
    let cfg = match config {
        Some(p) => TrainingConfig::from_toml(&read_text(p)?)?,
        None => TrainingConfig::default(),
    };
    cfg.validate()?;
    let data = load_training_data(data, cfg.schedule.clip_len)?;
    info!("training on {} sequences", data.records.len());
    let outcome = training::run_full_training(&data, &cfg, &RunOptions { out_dir: Some(out.to_path_buf()), resume })?;
    write_manifest(
        &out.join(MANIFEST_FILE),
        "train",
        &cfg.to_toml(),
        cfg.seed,
        &[("method", cfg.ablation.method_name()), ("checkpoints", outcome.checkpoint_paths.len().to_string())],
    )?;
    print!("{}", outcome.report.summary());
    Ok(())
}

fn generate(checkpoint: &Path, neutral: &Path, len: usize, seed: u64, out: &Path) -> Result<()> {
    let model = TrainedModel::load(checkpoint)?;
    let mesh = mesh_io::read_mesh(neutral)?;
    let synth = model.synthesize(&mesh, len, seed)?;
    pipeline::write_mesh_frames(out, &synth.meshes)?;
    let traj = out.join(TRAJECTORY_FILE);
    fs::write(&traj, pipeline::format_trajectory(&synth.landmark_disp)).map_err(|e| Error::Io { path: traj, source: e })?;
    let config_text = fs::read_to_string(checkpoint.join(training::CONFIG_FILE)).unwrap_or_default();
    write_manifest(
        &out.join(MANIFEST_FILE),
        "generate",
        &config_text,
        seed,
        &[("len", len.to_string()), ("neutral", neutral.display().to_string())],
    )?;
    println!("wrote {len} frames to {}", out.display());
    Ok(())
}

fn has_mesh_files(dir: &Path) -> Result<bool> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    Ok(entries.flatten().map(|e| e.path()).any(|p| {
        p.is_file() && mesh_io::is_mesh_file(&p) && p.file_stem().is_some_and(|s| s != "neutral")
    }))
}

/// Relative paths of every directory under `root` holding mesh frames (a lone
/// `neutral` mesh does not count). `root` itself is a sequence when it holds
/// frames directly.
fn sequence_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::NotFound(format!("sequence directory {}", root.display())));
    }
    let mut found = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = root.join(&rel);
        if has_mesh_files(&dir)? {
            found.push(rel.clone());
        }
        let entries = fs::read_dir(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        for e in entries.flatten() {
            if e.path().is_dir() {
                stack.push(rel.join(e.file_name()));
            }
        }
    }
    found.sort();
    Ok(found)
}

fn evaluate_csv(pred: &Path, gt: &Path, landmarks: &Path, method: &str) -> Result<String> {
    let idx = mesh_io::read_landmark_indices(landmarks)?;
    let seqs = sequence_dirs(gt)?;
    if seqs.is_empty() {
        return Err(Error::NotFound(format!("no mesh sequences under {}", gt.display())));
    }
    let mut csv = String::from("method,sequence,landmark,mesh\n");
    let (mut lm_sum, mut mesh_sum) = (0.0, 0.0);
    for rel in &seqs {
        let name = if rel.as_os_str().is_empty() { ".".to_string() } else { rel.display().to_string() };
        let g = dataset::load_mesh_sequence(&gt.join(rel))?;
        let p = dataset::load_mesh_sequence(&pred.join(rel))?;
        let named = |e: Error| match e {
            Error::Dimension(msg) => Error::Dimension(format!("sequence {name}: {msg}")),
            other => other,
        };
        let mesh = per_vertex_error(&p, &g).map_err(named)?;
        let lm = per_vertex_error(
            &extract_landmark_sequence(&p, &idx, 1.0)?,
            &extract_landmark_sequence(&g, &idx, 1.0)?,
        )
        .map_err(named)?;
        lm_sum += lm;
        mesh_sum += mesh;
        csv.push_str(&format!("{method},{name},{lm},{mesh}\n"));
    }
    let n = seqs.len() as f64;
    csv.push_str(&format!("{method},mean,{},{}\n", lm_sum / n, mesh_sum / n));
    Ok(csv)
}

fn evaluate(pred: &Path, gt: &Path, landmarks: &Path, method: &str, out: Option<&Path>) -> Result<()> {
    let csv = evaluate_csv(pred, gt, landmarks, method)?;
    match out {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| Error::Io { path: path.into(), source: e })?;
            let mut manifest = path.as_os_str().to_owned();
            manifest.push(".manifest");
            write_manifest(
                Path::new(&manifest),
                "evaluate",
                "",
                0,
                &[
                    ("method", method.to_string()),
                    ("pred", pred.display().to_string()),
                    ("gt", gt.display().to_string()),
                ],
            )
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { spec, out } => synth_data(spec.as_deref(), &out),
        Command::Train { config, data, out, resume } => train(config.as_deref(), &data, &out, resume),
        Command::Generate { checkpoint, neutral, len, seed, out } => generate(&checkpoint, &neutral, len, seed, &out),
        Command::Evaluate { pred, gt, landmarks, method, out } => {
            evaluate(&pred, &gt, &landmarks, &method, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
