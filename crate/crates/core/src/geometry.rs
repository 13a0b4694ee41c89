//! Meshes, landmark frames, displacement sequences, temporal operators and the
//! per-vertex error metric.
//!
//! All coordinates are stored in millimeters. The only unit conversion in the
//! crate is the x10 in [`per_vertex_error`], which reports in 0.1 mm.

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

/// Default landmark count.
pub const DEFAULT_NUM_LANDMARKS: usize = 68;
/// Vertex count of FLAME-topology registered meshes.
pub const FLAME_NUM_VERTICES: usize = 5023;

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn all_finite(points: &[Point3]) -> bool {
    points.iter().flatten().all(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        for face in &self.faces {
            for &i in face {
                if i as usize >= v {
                    return Err(Error::Bounds { index: i as usize, len: v });
                }
            }
        }
        if !all_finite(&self.vertices) {
            return Err(Error::Numeric("mesh has non-finite coordinates".into()));
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.vertices)
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    c.map(|x| x / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub points: Vec<Point3>,
}

impl LandmarkFrame {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if !all_finite(&points) {
            return Err(Error::Numeric("landmark frame has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn zeros(k: usize) -> Self {
        Self { points: vec![[0.0; 3]; k] }
    }
}

/// Vertex indices of the landmarks inside a mesh topology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkIndexSet {
    indices: Vec<usize>,
}

impl LandmarkIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = indices.clone();
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Usage(format!("landmark index {} listed twice", w[0])));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check_against(&self, num_vertices: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= num_vertices) {
            Some(&index) => Err(Error::Bounds { index, len: num_vertices }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Landmark,
    Mesh,
}

/// Time-indexed frames of equally sized point sets.
pub trait PointSeries: Sized {
    fn frames(&self) -> &[Vec<Point3>];
    fn with_frames(&self, frames: Vec<Vec<Point3>>) -> Self;
    fn space(&self) -> Space;

    fn num_frames(&self) -> usize {
        self.frames().len()
    }

    fn num_points(&self) -> usize {
        self.frames().first().map_or(0, Vec::len)
    }
}

/// A single reference frame that absolute sequences are measured against.
pub trait NeutralFrame {
    fn points(&self) -> &[Point3];
}

impl NeutralFrame for LandmarkFrame {
    fn points(&self) -> &[Point3] {
        &self.points
    }
}

impl NeutralFrame for Mesh {
    fn points(&self) -> &[Point3] {
        &self.vertices
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frames: Vec<Vec<Point3>>,
    pub frame_rate: f64,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<Vec<Point3>>, frame_rate: f64) -> Result<Self> {
        check_frames(&frames)?;
        Ok(Self { frames, frame_rate })
    }
}

/// Mesh frames sharing one face list.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSequence {
    pub faces: Vec<[u32; 3]>,
    pub frames: Vec<Vec<Point3>>,
}

impl MeshSequence {
    pub fn new(faces: Vec<[u32; 3]>, frames: Vec<Vec<Point3>>) -> Result<Self> {
        check_frames(&frames)?;
        Ok(Self { faces, frames })
    }

    pub fn frame_mesh(&self, t: usize) -> Mesh {
        Mesh { vertices: self.frames[t].clone(), faces: self.faces.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSequence {
    pub offsets: Vec<Vec<Point3>>,
    pub space: Space,
}

impl DisplacementSequence {
    pub fn new(offsets: Vec<Vec<Point3>>, space: Space) -> Result<Self> {
        check_frames(&offsets)?;
        Ok(Self { offsets, space })
    }

    pub fn zeros(t: usize, n: usize, space: Space) -> Self {
        Self { offsets: vec![vec![[0.0; 3]; n]; t], space }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.offsets
            .iter()
            .flatten()
            .zip(other.offsets.iter().flatten())
            .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
            .fold(0.0, f64::max)
    }
}

fn check_frames(frames: &[Vec<Point3>]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::Length("sequence has no frames".into()));
    }
    let n = frames[0].len();
    if let Some(t) = frames.iter().position(|f| f.len() != n) {
        return Err(Error::Dimension(format!(
            "frame {t} has {} points, frame 0 has {n}",
            frames[t].len()
        )));
    }
    if frames.iter().any(|f| !all_finite(f)) {
        return Err(Error::Numeric("sequence has non-finite coordinates".into()));
    }
    Ok(())
}

impl PointSeries for LandmarkSequence {
    fn frames(&self) -> &[Vec<Point3>] {
        &self.frames
    }
    fn with_frames(&self, frames: Vec<Vec<Point3>>) -> Self {
        Self { frames, frame_rate: self.frame_rate }
    }
    fn space(&self) -> Space {
        Space::Landmark
    }
}

impl PointSeries for MeshSequence {
    fn frames(&self) -> &[Vec<Point3>] {
        &self.frames
    }
    fn with_frames(&self, frames: Vec<Vec<Point3>>) -> Self {
        Self { faces: self.faces.clone(), frames }
    }
    fn space(&self) -> Space {
        Space::Mesh
    }
}

impl PointSeries for DisplacementSequence {
    fn frames(&self) -> &[Vec<Point3>] {
        &self.offsets
    }
    fn with_frames(&self, frames: Vec<Vec<Point3>>) -> Self {
        Self { offsets: frames, space: self.space }
    }
    fn space(&self) -> Space {
        self.space
    }
}

pub fn extract_landmarks(mesh: &Mesh, idx: &LandmarkIndexSet) -> Result<LandmarkFrame> {
    idx.check_against(mesh.num_vertices())?;
    Ok(LandmarkFrame { points: idx.indices().iter().map(|&i| mesh.vertices[i]).collect() })
}

/// Landmark positions for every frame of a mesh sequence.
pub fn extract_landmark_sequence(seq: &MeshSequence, idx: &LandmarkIndexSet, frame_rate: f64) -> Result<LandmarkSequence> {
    idx.check_against(seq.num_points())?;
    let frames = seq
        .frames
        .iter()
        .map(|f| idx.indices().iter().map(|&i| f[i]).collect())
        .collect();
    Ok(LandmarkSequence { frames, frame_rate })
}

/// Offsets of every frame from `neutral`.
pub fn to_displacements<S: PointSeries>(seq: &S, neutral: &impl NeutralFrame) -> Result<DisplacementSequence> {
    let base = neutral.points();
    if seq.num_points() != base.len() {
        return Err(Error::Dimension(format!(
            "sequence has {} points per frame, neutral has {}",
            seq.num_points(),
            base.len()
        )));
    }
    let offsets = seq
        .frames()
        .iter()
        .map(|f| f.iter().zip(base).map(|(&p, &n)| sub(p, n)).collect())
        .collect();
    Ok(DisplacementSequence { offsets, space: seq.space() })
}

fn add_to_neutral(base: &[Point3], disp: &DisplacementSequence) -> Result<Vec<Vec<Point3>>> {
    if disp.num_points() != base.len() {
        return Err(Error::Dimension(format!(
            "displacements have {} points per frame, neutral has {}",
            disp.num_points(),
            base.len()
        )));
    }
    Ok(disp
        .offsets
        .iter()
        .map(|f| f.iter().zip(base).map(|(&d, &n)| add(n, d)).collect())
        .collect())
}

/// Adds mesh-space displacements to the neutral mesh; every frame keeps the neutral faces.
pub fn apply_displacements(neutral: &Mesh, disp: &DisplacementSequence) -> Result<MeshSequence> {
    if disp.space != Space::Mesh {
        return Err(Error::Usage("landmark-space displacements cannot be applied to a mesh".into()));
    }
    let frames = add_to_neutral(&neutral.vertices, disp)?;
    Ok(MeshSequence { faces: neutral.faces.clone(), frames })
}

/// Landmark-space counterpart of [`apply_displacements`].
pub fn apply_landmark_displacements(
    neutral: &LandmarkFrame,
    disp: &DisplacementSequence,
    frame_rate: f64,
) -> Result<LandmarkSequence> {
    if disp.space != Space::Landmark {
        return Err(Error::Usage("mesh-space displacements cannot be applied to landmarks".into()));
    }
    Ok(LandmarkSequence { frames: add_to_neutral(&neutral.points, disp)?, frame_rate })
}

/// Consecutive-frame deformation: out[t] = frames[t+1] - frames[t].
pub fn temporal_diff<S: PointSeries>(seq: &S) -> Result<DisplacementSequence> {
    let frames = seq.frames();
    if frames.len() < 2 {
        return Err(Error::Length(format!(
            "temporal difference needs at least 2 frames, got {}",
            frames.len()
        )));
    }
    let offsets = frames
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| sub(b, a)).collect())
        .collect();
    Ok(DisplacementSequence { offsets, space: seq.space() })
}

/// Linear interpolation weights taking `t_in` frames to `t_out` frames over
/// normalized time [0, 1]: output frame j reads (src index, weight of the next frame).
pub fn interpolation_stencil(t_in: usize, t_out: usize) -> Vec<(usize, f64)> {
    if t_in == t_out {
        return (0..t_out).map(|j| (j, 0.0)).collect();
    }
    (0..t_out)
        .map(|j| {
            if t_out == 1 || t_in == 1 {
                return (0, 0.0);
            }
            if j == t_out - 1 {
                return (t_in - 1, 0.0);
            }
            let pos = j as f64 * (t_in - 1) as f64 / (t_out - 1) as f64;
            let i = (pos.floor() as usize).min(t_in - 2);
            (i, pos - i as f64)
        })
        .collect()
}

/// Dense `t_out x t_in` matrix form of [`interpolation_stencil`].
pub fn interpolation_matrix(t_in: usize, t_out: usize) -> crate::tensor::Matrix {
    let mut m = crate::tensor::Matrix::zeros(t_out, t_in);
    for (j, (i, w)) in interpolation_stencil(t_in, t_out).into_iter().enumerate() {
        if w == 0.0 {
            m.set(j, i, 1.0);
        } else {
            m.set(j, i, 1.0 - w);
            m.set(j, i + 1, w);
        }
    }
    m
}

/// Piecewise-linear resampling in normalized time. Endpoints are copied exactly.
pub fn resample_time<S: PointSeries>(seq: &S, target_len: usize) -> Result<S> {
    if target_len < 2 {
        return Err(Error::Usage(format!("resample target length must be at least 2, got {target_len}")));
    }
    let frames = seq.frames();
    if frames.len() < 2 {
        return Err(Error::Length(format!("resampling needs at least 2 frames, got {}", frames.len())));
    }
    if frames.len() == target_len {
        return Ok(seq.with_frames(frames.to_vec()));
    }
    let out = interpolation_stencil(frames.len(), target_len)
        .into_iter()
        .map(|(i, w)| {
            if w == 0.0 {
                frames[i].clone()
            } else {
                frames[i]
                    .iter()
                    .zip(&frames[i + 1])
                    .map(|(a, b)| [0, 1, 2].map(|k| (1.0 - w) * a[k] + w * b[k]))
                    .collect()
            }
        })
        .collect();
    Ok(seq.with_frames(out))
}

/// Mean Euclidean distance between corresponding points over all frames and
/// points, reported in 0.1 mm.
pub fn per_vertex_error(pred: &impl PointSeries, gt: &impl PointSeries) -> Result<f64> {
    let (p, g) = (pred.frames(), gt.frames());
    if p.len() != g.len() || pred.num_points() != gt.num_points() {
        return Err(Error::Dimension(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            p.len(),
            pred.num_points(),
            g.len(),
            gt.num_points()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (fp, fg) in p.iter().zip(g) {
        if fp.len() != fg.len() {
            return Err(Error::Dimension("ragged frames in error computation".into()));
        }
        for (&a, &b) in fp.iter().zip(fg) {
            total += dist(a, b);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Dimension("empty sequences".into()));
    }
    Ok(total / count as f64 * 10.0)
}

/// Subtract frame 0 from every frame so the sequence starts exactly at zero offset.
pub fn rebase(disp: &DisplacementSequence) -> DisplacementSequence {
    let first = disp.offsets[0].clone();
    let offsets = disp
        .offsets
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if t == 0 {
                vec![[0.0; 3]; f.len()]
            } else {
                f.iter().zip(&first).map(|(&a, &b)| sub(a, b)).collect()
            }
        })
        .collect();
    DisplacementSequence { offsets, space: disp.space }
}
