//! Registered mesh sequences: directory loader, normalization, binary cache and
//! a seeded synthetic generator with an exactly known sparse-to-dense map.
//!
//! Directory layout read by [`load_dataset`]:
//!
//! ```text
//! root/<identity>/<expression>/<frame>.obj|ply   zero-padded frame numbers
//! root/<identity>/neutral.obj|ply                optional; frame 0 otherwise
//! ```
//!
//! Cache layout written by [`write_cache`] (little-endian):
//!
//! ```text
//! magic "F4DS" | version u32 | V u32 | K u32 | T u32 | records u32 | faces u32
//! landmark indices: K x u32
//! faces: faces x 3 x u32
//! per record: identity (u32 len + UTF-8) | expression (u32 len + UTF-8)
//!             neutral V x 3 f32 | frames T x V x 3 f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    self, extract_landmarks, resample_time, to_displacements, DisplacementSequence, LandmarkFrame,
    LandmarkIndexSet, LandmarkSequence, Mesh, MeshSequence, Point3,
};
use crate::mesh_io;

pub const CACHE_MAGIC: &[u8; 4] = b"F4DS";
pub const CACHE_VERSION: u32 = 1;
pub const DEFAULT_CLIP_LEN: usize = 30;
pub const DEFAULT_FRAME_RATE: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    pub identity_id: String,
    pub expression_label: String,
    pub mesh_seq: MeshSequence,
    pub neutral: Mesh,
}

impl SequenceRecord {
    pub fn num_frames(&self) -> usize {
        self.mesh_seq.frames.len()
    }

    pub fn neutral_landmarks(&self, idx: &LandmarkIndexSet) -> Result<LandmarkFrame> {
        extract_landmarks(&self.neutral, idx)
    }

    pub fn landmark_sequence(&self, idx: &LandmarkIndexSet) -> Result<LandmarkSequence> {
        geometry::extract_landmark_sequence(&self.mesh_seq, idx, DEFAULT_FRAME_RATE)
    }

    pub fn landmark_displacements(&self, idx: &LandmarkIndexSet) -> Result<DisplacementSequence> {
        to_displacements(&self.landmark_sequence(idx)?, &self.neutral_landmarks(idx)?)
    }

    pub fn mesh_displacements(&self) -> Result<DisplacementSequence> {
        to_displacements(&self.mesh_seq, &self.neutral)
    }

    pub fn resampled(&self, clip_len: usize) -> Result<Self> {
        Ok(Self { mesh_seq: resample_time(&self.mesh_seq, clip_len)?, ..self.clone() })
    }
}

/// Records sharing one topology and one landmark index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub landmarks: LandmarkIndexSet,
    pub records: Vec<SequenceRecord>,
}

impl Dataset {
    pub fn num_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.records.first().map_or(0, |r| r.neutral.num_vertices())
    }

    pub fn clip_len(&self) -> usize {
        self.records.first().map_or(0, SequenceRecord::num_frames)
    }

    pub fn identities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.records.iter().map(|r| r.identity_id.clone()).collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn summary(&self) -> String {
        format!(
            "identities={} sequences={} T={} K={} V={}",
            self.identities().len(),
            self.records.len(),
            self.clip_len(),
            self.num_landmarks(),
            self.num_vertices()
        )
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn dir_name(path: &Path) -> String {
    path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Reads numbered mesh frames from one directory into a sequence, checking that
/// vertex count and faces agree with the first frame.
pub fn load_mesh_sequence(dir: &Path) -> Result<MeshSequence> {
    let files: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_file() && mesh_io::is_mesh_file(p) && file_stem(p) != "neutral")
        .collect();
    if files.is_empty() {
        return Err(Error::NotFound(format!("no mesh frames in {}", dir.display())));
    }
    let first = mesh_io::read_mesh(&files[0])?;
    let mut frames = vec![first.vertices];
    for f in &files[1..] {
        let m = mesh_io::read_mesh(f)?;
        if m.num_vertices() != frames[0].len() {
            return Err(Error::data(
                f,
                format!("has {} vertices, first frame has {}", m.num_vertices(), frames[0].len()),
            ));
        }
        if m.faces != first.faces {
            return Err(Error::data(f, "face list differs from the first frame"));
        }
        frames.push(m.vertices);
    }
    MeshSequence::new(first.faces, frames)
}

/// Loads `root/<identity>/<expression>/` sequences in lexicographic path order and
/// resamples each to `clip_len` frames.
pub fn load_dataset(root: &Path, index_file: &Path, clip_len: usize) -> Result<Dataset> {
    if !root.is_dir() {
        return Err(Error::NotFound(format!("dataset root {} does not exist", root.display())));
    }
    let landmarks = mesh_io::read_landmark_indices(index_file)?;
    let mut records = Vec::new();
    for id_dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let entries = sorted_entries(&id_dir)?;
        let neutral_file = entries
            .iter()
            .find(|p| p.is_file() && mesh_io::is_mesh_file(p) && file_stem(p) == "neutral");
        let neutral_mesh = neutral_file.map(|p| mesh_io::read_mesh(p)).transpose()?;
        for expr_dir in entries.iter().filter(|p| p.is_dir()) {
            let seq = load_mesh_sequence(expr_dir)?;
            if seq.frames.len() < 2 {
                return Err(Error::data(expr_dir, "sequence needs at least 2 frames"));
            }
            let neutral = match &neutral_mesh {
                Some(m) => {
                    if m.num_vertices() != seq.frames[0].len() {
                        return Err(Error::data(
                            neutral_file.unwrap(),
                            format!("neutral has {} vertices, sequence has {}", m.num_vertices(), seq.frames[0].len()),
                        ));
                    }
                    m.clone()
                }
                None => seq.frame_mesh(0),
            };
            landmarks.check_against(neutral.num_vertices()).map_err(|e| Error::data(index_file, e.to_string()))?;
            let record = SequenceRecord {
                identity_id: dir_name(&id_dir),
                expression_label: dir_name(expr_dir),
                mesh_seq: seq,
                neutral,
            };
            records.push(record.resampled(clip_len)?);
        }
    }
    if records.is_empty() {
        return Err(Error::NotFound(format!("no sequences under {}", root.display())));
    }
    let v = records[0].neutral.num_vertices();
    if let Some(r) = records.iter().find(|r| r.neutral.num_vertices() != v) {
        return Err(Error::data(
            root.join(&r.identity_id).join(&r.expression_label),
            format!("has {} vertices, other sequences have {v}", r.neutral.num_vertices()),
        ));
    }
    Ok(Dataset { landmarks, records })
}

/// Writes a dataset in the directory layout [`load_dataset`] reads.
pub fn write_dataset_tree(root: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for r in &data.records {
        let id_dir = root.join(&r.identity_id);
        let expr_dir = id_dir.join(&r.expression_label);
        fs::create_dir_all(&expr_dir).map_err(|e| Error::io(&expr_dir, e))?;
        mesh_io::write_mesh(&id_dir.join("neutral.obj"), &r.neutral)?;
        for t in 0..r.num_frames() {
            mesh_io::write_mesh(&expr_dir.join(format!("{t:03}.obj")), &r.mesh_seq.frame_mesh(t))?;
        }
    }
    mesh_io::write_landmark_indices(&root.join("landmarks.txt"), &data.landmarks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub center: Point3,
    pub scale: f64,
}

impl NormalizationStats {
    /// Centered at the neutral centroid of `record`, with a shared `scale`.
    pub fn for_record(record: &SequenceRecord, scale: f64) -> Self {
        Self { center: record.neutral.centroid(), scale }
    }

    pub fn for_frame(frame: &LandmarkFrame, scale: f64) -> Self {
        Self { center: geometry::centroid(&frame.points), scale }
    }

    fn check(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Usage(format!("normalization scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn apply(&self, p: Point3) -> Point3 {
        [0, 1, 2].map(|k| (p[k] - self.center[k]) / self.scale)
    }

    pub fn invert(&self, p: Point3) -> Point3 {
        [0, 1, 2].map(|k| p[k] * self.scale + self.center[k])
    }

    pub fn normalize_frame(&self, frame: &LandmarkFrame) -> Result<LandmarkFrame> {
        self.check()?;
        Ok(LandmarkFrame { points: frame.points.iter().map(|&p| self.apply(p)).collect() })
    }
}

/// Largest axis-aligned bounding-box extent over all neutral meshes.
pub fn global_scale(records: &[SequenceRecord]) -> f64 {
    records
        .iter()
        .map(|r| {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for p in &r.neutral.vertices {
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
            (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn map_record(record: &SequenceRecord, f: impl Fn(Point3) -> Point3) -> SequenceRecord {
    let frames = record.mesh_seq.frames.iter().map(|fr| fr.iter().map(|&p| f(p)).collect()).collect();
    SequenceRecord {
        identity_id: record.identity_id.clone(),
        expression_label: record.expression_label.clone(),
        mesh_seq: MeshSequence { faces: record.mesh_seq.faces.clone(), frames },
        neutral: Mesh {
            vertices: record.neutral.vertices.iter().map(|&p| f(p)).collect(),
            faces: record.neutral.faces.clone(),
        },
    }
}

pub fn normalize(record: &SequenceRecord, stats: &NormalizationStats) -> Result<SequenceRecord> {
    stats.check()?;
    Ok(map_record(record, |p| stats.apply(p)))
}

pub fn denormalize(record: &SequenceRecord, stats: &NormalizationStats) -> Result<SequenceRecord> {
    stats.check()?;
    Ok(map_record(record, |p| stats.invert(p)))
}

fn default_amplitude() -> f64 {
    2.0
}

/// Parameters of the seeded synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_identities: usize,
    /// Total sequences, assigned to identities round-robin.
    pub num_sequences: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub num_basis: usize,
    pub rng_seed: u64,
    /// Peak per-basis landmark amplitude in mm.
    #[serde(default = "default_amplitude")]
    pub amplitude_mm: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_identities: 2,
            num_sequences: 4,
            t: DEFAULT_CLIP_LEN,
            k: 10,
            v: 60,
            num_basis: 3,
            rng_seed: 7,
            amplitude_mm: default_amplitude(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_identities", self.num_identities),
            ("num_sequences", self.num_sequences),
            ("K", self.k),
            ("V", self.v),
            ("num_basis", self.num_basis),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.t < 2 {
            return Err(Error::Config("T must be at least 2".into()));
        }
        if self.k > self.v {
            return Err(Error::Config(format!("K = {} exceeds V = {}", self.k, self.v)));
        }
        if self.v < 3 {
            return Err(Error::Config("V must be at least 3".into()));
        }
        if !(self.amplitude_mm > 0.0) {
            return Err(Error::Config("amplitude_mm must be positive".into()));
        }
        Ok(())
    }

    /// Parses the TOML spec file format; errors carry the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

pub(crate) fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse { line, msg: e.message().to_string() }
}

/// Per-identity sparse-to-dense map: dense[v] = sum_k weights[v][k] * landmark[k].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    pub weights: Vec<Vec<f64>>,
}

impl DenseMap {
    pub fn apply(&self, lm_disp: &[Point3]) -> Vec<Point3> {
        self.weights
            .iter()
            .map(|row| {
                let mut p = [0.0; 3];
                for (w, l) in row.iter().zip(lm_disp) {
                    for k in 0..3 {
                        p[k] += w * l[k];
                    }
                }
                p
            })
            .collect()
    }
}

/// Synthetic dataset plus the exact construction behind it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub dense_maps: BTreeMap<String, DenseMap>,
    /// Landmark-space deformation bases, each K points.
    pub bases: Vec<Vec<Point3>>,
}

fn grid_faces(v: usize) -> (usize, Vec<[u32; 3]>) {
    let cols = (v as f64).sqrt().ceil() as usize;
    let rows = v.div_ceil(cols);
    let mut faces = Vec::new();
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols - 1 {
            let a = r * cols + c;
            let (b, d, e) = (a + 1, a + cols, a + cols + 1);
            if e < v {
                faces.push([a as u32, d as u32, b as u32]);
                faces.push([b as u32, d as u32, e as u32]);
            }
        }
    }
    (cols, faces)
}

/// Seeded desk-scale data. Each identity gets an ellipsoidal-cap neutral mesh;
/// each sequence moves the landmarks by a smooth time-weighted sum of fixed
/// landmark bases, and every vertex follows through a Gaussian-kernel blend of
/// landmark displacements (so dense motion is an exact linear function of
/// landmark motion). Frame 0 is exactly the neutral.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (cols, faces) = grid_faces(spec.v);
    let rows = spec.v.div_ceil(cols);

    let mut indices: Vec<usize> = sample(&mut rng, spec.v, spec.k).into_vec();
    indices.sort_unstable();
    let landmarks = LandmarkIndexSet::new(indices)?;

    let bases: Vec<Vec<Point3>> = (0..spec.num_basis)
        .map(|_| {
            let raw: Vec<Point3> =
                (0..spec.k).map(|_| [0; 3].map(|_| rng.sample::<f64, _>(StandardNormal))).collect();
            let peak = raw.iter().map(|p| geometry::dist(*p, [0.0; 3])).fold(0.0, f64::max).max(1e-12);
            raw.into_iter().map(|p| p.map(|x| x / peak)).collect()
        })
        .collect();

    let mut neutrals = Vec::new();
    let mut dense_maps = BTreeMap::new();
    for i in 0..spec.num_identities {
        let width = rng.random_range(130.0..160.0);
        let height = rng.random_range(170.0..200.0);
        let depth = rng.random_range(50.0..70.0);
        let vertices: Vec<Point3> = (0..spec.v)
            .map(|v| {
                let u = (v % cols) as f64 / (cols.max(2) - 1) as f64 - 0.5;
                let w = (v / cols) as f64 / (rows.max(2) - 1) as f64 - 0.5;
                let cap = (1.0 - 2.0 * (u * u + w * w)).max(0.0).sqrt();
                let jitter = [0; 3].map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal));
                [width * u + jitter[0], height * w + jitter[1], depth * cap + jitter[2]]
            })
            .collect();
        let neutral = Mesh::new(vertices, faces.clone())?;
        let lm = extract_landmarks(&neutral, &landmarks)?;
        let sigma = 0.35 * width / (spec.k as f64).sqrt();
        let weights = neutral
            .vertices
            .iter()
            .enumerate()
            .map(|(v, &p)| {
                if let Some(k) = landmarks.indices().iter().position(|&i| i == v) {
                    let mut row = vec![0.0; spec.k];
                    row[k] = 1.0;
                    return row;
                }
                let raw: Vec<f64> = lm
                    .points
                    .iter()
                    .map(|&q| {
                        let d = geometry::dist(p, q);
                        (-d * d / (2.0 * sigma * sigma)).exp().max(1e-12)
                    })
                    .collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / total).collect()
            })
            .collect();
        dense_maps.insert(identity_name(i), DenseMap { weights });
        neutrals.push(neutral);
    }

    let mut records = Vec::with_capacity(spec.num_sequences);
    for s in 0..spec.num_sequences {
        let i = s % spec.num_identities;
        let amps: Vec<f64> = (0..spec.num_basis).map(|_| rng.random_range(-1.0..1.0) * spec.amplitude_mm).collect();
        let freqs: Vec<f64> = (0..spec.num_basis).map(|_| rng.random_range(0.5..1.0)).collect();
        let neutral = &neutrals[i];
        let map = &dense_maps[&identity_name(i)];
        let frames = (0..spec.t)
            .map(|t| {
                let phase = t as f64 / (spec.t - 1) as f64;
                let lm_disp: Vec<Point3> = (0..spec.k)
                    .map(|k| {
                        let mut p = [0.0; 3];
                        for b in 0..spec.num_basis {
                            let w = amps[b] * (1.0 - (2.0 * std::f64::consts::PI * freqs[b] * phase).cos()) / 2.0;
                            for c in 0..3 {
                                p[c] += w * bases[b][k][c];
                            }
                        }
                        p
                    })
                    .collect();
                map.apply(&lm_disp).iter().zip(&neutral.vertices).map(|(&d, &n)| geometry::add(n, d)).collect()
            })
            .collect();
        records.push(SequenceRecord {
            identity_id: identity_name(i),
            expression_label: format!("expr{s:02}"),
            mesh_seq: MeshSequence::new(faces.clone(), frames)?,
            neutral: neutral.clone(),
        });
    }
    records.sort_by(|a, b| (&a.identity_id, &a.expression_label).cmp(&(&b.identity_id, &b.expression_label)));
    Ok(SyntheticData { dataset: Dataset { landmarks, records }, dense_maps, bases })
}

fn identity_name(i: usize) -> String {
    format!("id{i:02}")
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&(x as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_points(out: &mut Vec<u8>, pts: &[Point3]) {
    for p in pts {
        for x in p {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
}

pub fn cache_bytes(data: &Dataset) -> Result<Vec<u8>> {
    let v = data.num_vertices();
    let t = data.clip_len();
    if data.records.iter().any(|r| r.num_frames() != t) {
        return Err(Error::Usage("cache requires equal-length sequences".into()));
    }
    let faces = data.records.first().map(|r| r.neutral.faces.clone()).unwrap_or_default();
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    for x in [v, data.num_landmarks(), t, data.records.len(), faces.len()] {
        put_u32(&mut out, x);
    }
    for &i in data.landmarks.indices() {
        put_u32(&mut out, i);
    }
    for f in &faces {
        for &i in f {
            put_u32(&mut out, i as usize);
        }
    }
    for r in &data.records {
        put_str(&mut out, &r.identity_id);
        put_str(&mut out, &r.expression_label);
        put_points(&mut out, &r.neutral.vertices);
        for f in &r.mesh_seq.frames {
            put_points(&mut out, f);
        }
    }
    Ok(out)
}

pub fn write_cache(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, cache_bytes(data)?).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(bytes.as_slice());
    let trunc = || Error::data(path, "truncated cache");
    let u32_at = |cur: &mut Cursor<&[u8]>| -> Result<usize> {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b).map_err(|_| trunc())?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| trunc())?;
    if &magic != CACHE_MAGIC {
        return Err(Error::data(path, "not a dataset cache (bad magic)"));
    }
    let version = u32_at(&mut cur)?;
    if version != CACHE_VERSION as usize {
        return Err(Error::data(path, format!("unsupported cache version {version}")));
    }
    let (v, k, t, n, nf) = (u32_at(&mut cur)?, u32_at(&mut cur)?, u32_at(&mut cur)?, u32_at(&mut cur)?, u32_at(&mut cur)?);
    let indices = (0..k).map(|_| u32_at(&mut cur)).collect::<Result<Vec<_>>>()?;
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        faces.push([u32_at(&mut cur)? as u32, u32_at(&mut cur)? as u32, u32_at(&mut cur)? as u32]);
    }
    let read_str = |cur: &mut Cursor<&[u8]>| -> Result<String> {
        let mut b = [0u8; 4];
        cur.read_exact(&mut b).map_err(|_| trunc())?;
        let mut s = vec![0u8; u32::from_le_bytes(b) as usize];
        cur.read_exact(&mut s).map_err(|_| trunc())?;
        String::from_utf8(s).map_err(|_| Error::data(path, "invalid UTF-8 in cache"))
    };
    let read_points = |cur: &mut Cursor<&[u8]>| -> Result<Vec<Point3>> {
        let mut pts = Vec::with_capacity(v);
        let mut b = [0u8; 4];
        for _ in 0..v {
            let mut p = [0.0; 3];
            for x in &mut p {
                cur.read_exact(&mut b).map_err(|_| trunc())?;
                *x = f32::from_le_bytes(b) as f64;
            }
            pts.push(p);
        }
        Ok(pts)
    };
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let identity_id = read_str(&mut cur)?;
        let expression_label = read_str(&mut cur)?;
        let neutral = Mesh::new(read_points(&mut cur)?, faces.clone()).map_err(|e| Error::data(path, e.to_string()))?;
        let frames = (0..t).map(|_| read_points(&mut cur)).collect::<Result<Vec<_>>>()?;
        records.push(SequenceRecord {
            identity_id,
            expression_label,
            mesh_seq: MeshSequence::new(faces.clone(), frames)?,
            neutral,
        });
    }
    Ok(Dataset { landmarks: LandmarkIndexSet::new(indices)?, records })
}
