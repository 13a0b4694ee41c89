use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use face4d::geometry::Mesh;
use face4d::mesh_io;

const TINY: &str = "\
[autoencoder]
epochs = 30
[schedule]
level_steps = [4, 4, 4, 6]
critic_steps = 1
[decoder]
epochs = 10
";

fn face4d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_face4d")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = face4d(&["synth-data", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn train(dir: &Path, data: &Path, extra: &str, name: &str) -> PathBuf {
    let cfg = dir.join(format!("{name}.toml"));
    fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    let out_dir = dir.join(name);
    let out = face4d(&["train", "--config", p(&cfg), "--data", p(data), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out_dir
}

fn manifest(dir: &Path) -> String {
    fs::read_to_string(dir.join("manifest.txt")).unwrap()
}

#[test]
fn synth_data_prints_summary_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let out = face4d(&["synth-data", "--out", p(&a)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("identities=2") && text.contains("sequences=4"), "{text}");
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "num_identities = 2\nnum_sequences = 4\nT = 12\nK = 6\nV = 30\nnum_basis = 2\nrng_seed = 3\n").unwrap();
    let (b, c) = (dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&face4d(&["synth-data", "--spec", p(&spec), "--out", p(&b)])), 0);
    assert_eq!(code(&face4d(&["synth-data", "--spec", p(&spec), "--out", p(&c)])), 0);
    assert_eq!(fs::read(b.join("dataset.cache")).unwrap(), fs::read(c.join("dataset.cache")).unwrap());
    let m = manifest(&b);
    assert!(m.contains("command=synth-data") && m.contains("seed=3") && m.contains("config_sha256="), "{m}");
}

#[test]
fn synth_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    fs::write(&spec, "num_identities = 2\nK = [1]\n").unwrap();
    let out = face4d(&["synth-data", "--spec", p(&spec), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    let file = dir.path().join("plain");
    fs::write(&file, "").unwrap();
    let out = face4d(&["synth-data", "--out", p(&file.join("sub"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn train_generate_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run = train(dir.path(), &data, "", "run");
    for f in ["autoencoder.ckpt", "level0.ckpt", "level3.ckpt", "decoder.ckpt", "report.csv", "landmarks.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    assert!(manifest(&run).contains("method=full"));

    // drop the last stages and resume
    let decoder = fs::read(run.join("decoder.ckpt")).unwrap();
    let report = fs::read(run.join("report.csv")).unwrap();
    fs::remove_file(run.join("level3.ckpt")).unwrap();
    fs::remove_file(run.join("decoder.ckpt")).unwrap();
    let cfg = dir.path().join("run.toml");
    let out = face4d(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run), "--resume"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(run.join("decoder.ckpt")).unwrap(), decoder);
    assert_eq!(fs::read(run.join("report.csv")).unwrap(), report);

    let neutral = data.join("id00").join("neutral.obj");
    let gen = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = face4d(&[
            "generate", "--checkpoint", p(&run), "--neutral", p(&neutral), "--len", "30", "--seed", "5", "--out", p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        out_dir
    };
    let (g1, g2) = (gen("g1"), gen("g2"));
    let mut objs: Vec<String> = fs::read_dir(&g1)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".obj"))
        .collect();
    objs.sort();
    assert_eq!(objs.len(), 30);
    assert_eq!(objs[0], "000.obj");
    assert_eq!(objs[29], "029.obj");
    let first = mesh_io::read_mesh(&g1.join("000.obj")).unwrap();
    assert_eq!(first.vertices, mesh_io::read_mesh(&neutral).unwrap().vertices);
    for f in objs.iter().map(String::as_str).chain(["landmarks_trajectory.txt", "manifest.txt"]) {
        assert_eq!(fs::read(g1.join(f)).unwrap(), fs::read(g2.join(f)).unwrap(), "{f}");
    }
    let traj = fs::read_to_string(g1.join("landmarks_trajectory.txt")).unwrap();
    assert_eq!(traj.lines().count(), 30);

    // a neutral mesh with a different vertex count
    let n = mesh_io::read_mesh(&neutral).unwrap();
    let k = n.vertices.len() - 1;
    let faces = n.faces.iter().copied().filter(|f| f.iter().all(|&i| (i as usize) < k)).collect();
    let small = Mesh::new(n.vertices[..k].to_vec(), faces).unwrap();
    let small_path = dir.path().join("small.obj");
    mesh_io::write_mesh(&small_path, &small).unwrap();
    let out = face4d(&[
        "generate", "--checkpoint", p(&run), "--neutral", p(&small_path), "--out", p(&dir.path().join("g3")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("incompatible"), "{}", stderr(&out));
}

#[test]
fn coherence_ablation_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run = train(dir.path(), &data, "[ablation]\nuse_coh = false\n", "nocoh");
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    let coh: Vec<f64> = report
        .lines()
        .filter_map(|l| {
            let parts: Vec<&str> = l.split(',').collect();
            (parts.len() == 3 && (parts[1].ends_with(".coh") || parts[1].ends_with(".loss_coh"))).then(|| parts[2].parse().unwrap())
        })
        .collect();
    assert!(!coh.is_empty());
    assert!(coh.iter().all(|&v| v == 0.0));
    assert!(manifest(&run).contains("method=w/o L_coh"));
}

#[test]
fn train_rejects_bad_input_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[schedule]\ncritic_stepz = 3\n").unwrap();
    let out_dir = dir.path().join("never");
    let out = face4d(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("critic_stepz"), "{}", stderr(&out));
    assert!(!out_dir.exists());

    let out = face4d(&["train", "--data", p(&dir.path().join("missing")), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not found"));
    assert!(!out_dir.exists());

    assert_eq!(code(&face4d(&["train", "--data", p(&data), "--out", p(&out_dir), "--bogus"])), 1);
}

fn write_sequence(dir: &Path, frames: &[Mesh]) {
    fs::create_dir_all(dir).unwrap();
    for (t, m) in frames.iter().enumerate() {
        mesh_io::write_mesh(&dir.join(format!("{t:03}.obj")), m).unwrap();
    }
}

#[test]
fn evaluate_reports_per_sequence_rows() {
    let dir = tempfile::tempdir().unwrap();
    let base = Mesh::new(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.5]],
        vec![[0, 1, 2], [1, 3, 2]],
    )
    .unwrap();
    let moved = |dz: f64| Mesh::new(base.vertices.iter().map(|v| [v[0], v[1], v[2] + dz]).collect(), base.faces.clone()).unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    for name in ["s1", "s2"] {
        write_sequence(&gt.join(name), &[base.clone(), moved(1.0), moved(2.0)]);
        write_sequence(&pred.join(name), &[moved(0.25), moved(1.25), moved(2.25)]);
    }
    let lm = dir.path().join("lm.txt");
    fs::write(&lm, "0\n3\n").unwrap();

    let out = face4d(&["evaluate", "--pred", p(&gt), "--gt", p(&gt), "--landmarks", p(&lm)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8_lossy(&out.stdout).into_owned();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "method,sequence,landmark,mesh");
    assert_eq!(rows.len(), 4);
    assert!(rows[1..].iter().all(|r| r.ends_with(",0,0")), "{csv}");

    let table = dir.path().join("table.csv");
    let out = face4d(&[
        "evaluate", "--pred", p(&pred), "--gt", p(&gt), "--landmarks", p(&lm), "--method", "full", "--out", p(&table),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(&table).unwrap();
    assert_eq!(
        csv,
        "method,sequence,landmark,mesh\nfull,s1,2.5,2.5\nfull,s2,2.5,2.5\nfull,mean,2.5,2.5\n"
    );
    assert!(dir.path().join("table.csv.manifest").exists());

    // one frame short
    fs::remove_file(pred.join("s2").join("002.obj")).unwrap();
    let out = face4d(&["evaluate", "--pred", p(&pred), "--gt", p(&gt), "--landmarks", p(&lm)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("sequence s2"), "{}", stderr(&out));
}
