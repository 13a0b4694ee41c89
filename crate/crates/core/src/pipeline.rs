//! End-to-end synthesis from trained stages: neutral mesh -> landmark
//! displacements -> mesh displacements -> mesh sequence.

use std::path::{Path, PathBuf};

use crate::autoencoder::LandmarkAutoencoder;
use crate::checkpoint::Checkpoint;
use crate::decoder::DisplacementDecoder;
use crate::error::{Error, Result};
use crate::generator::{GeneratorStack, NoisePyramid};
use crate::geometry::{
    apply_displacements, extract_landmarks, DisplacementSequence, LandmarkFrame, LandmarkIndexSet, Mesh,
    MeshSequence, PointSeries, Space,
};
use crate::mesh_io;

pub const AUTOENCODER_FILE: &str = "autoencoder.ckpt";
pub const DECODER_FILE: &str = "decoder.ckpt";
pub const LANDMARKS_FILE: &str = "landmarks.txt";

pub fn level_file(level: usize) -> String {
    format!("level{level}.ckpt")
}

/// Decodes landmark displacements and subtracts the decoded first frame, so a
/// sequence that starts at neutral decodes to one that starts exactly at neutral.
pub fn decode_rebased(
    decoder: &DisplacementDecoder,
    lm_disp: &DisplacementSequence,
    neutral: &LandmarkFrame,
) -> Result<DisplacementSequence> {
    let dense = decoder.decode_sequence(lm_disp, neutral)?;
    let first = dense.offsets[0].clone();
    let frames = dense
        .frames()
        .iter()
        .map(|f| f.iter().zip(&first).map(|(p, q)| [p[0] - q[0], p[1] - q[1], p[2] - q[2]]).collect())
        .collect();
    DisplacementSequence::new(frames, Space::Mesh)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub landmark_disp: DisplacementSequence,
    pub mesh_disp: DisplacementSequence,
    pub meshes: MeshSequence,
}

/// Generator stack, decoder and landmark layout loaded together.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub stack: GeneratorStack,
    pub decoder: DisplacementDecoder,
    pub landmarks: LandmarkIndexSet,
}

impl TrainedModel {
    pub fn new(stack: GeneratorStack, decoder: DisplacementDecoder, landmarks: LandmarkIndexSet) -> Result<Self> {
        let k = landmarks.len();
        if stack.num_landmarks() != k || decoder.num_landmarks() != k {
            return Err(Error::Compatibility(format!(
                "landmark count disagrees: index file {k}, generator {}, decoder {}",
                stack.num_landmarks(),
                decoder.num_landmarks()
            )));
        }
        landmarks.check_against(decoder.num_vertices()).map_err(|e| Error::Compatibility(e.to_string()))?;
        Ok(Self { stack, decoder, landmarks })
    }

    /// Loads `autoencoder.ckpt` (if present), `level0.ckpt`, `level1.ckpt`, ...,
    /// `decoder.ckpt` and `landmarks.txt` from a training output directory.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::NotFound(format!("checkpoint directory {}", dir.display())));
        }
        let ae_path = dir.join(AUTOENCODER_FILE);
        let ae = if ae_path.exists() {
            Some(LandmarkAutoencoder::from_checkpoint(&Checkpoint::load(&ae_path)?)?)
        } else {
            None
        };
        let mut levels = Vec::new();
        loop {
            let p: PathBuf = dir.join(level_file(levels.len()));
            if !p.exists() {
                break;
            }
            levels.push(Checkpoint::load(&p)?);
        }
        let stack = GeneratorStack::from_checkpoints(&levels, ae)?;
        let dec_path = dir.join(DECODER_FILE);
        if !dec_path.exists() {
            return Err(Error::NotFound(format!("decoder checkpoint {}", dec_path.display())));
        }
        let decoder = DisplacementDecoder::from_checkpoint(&Checkpoint::load(&dec_path)?)?;
        let landmarks = mesh_io::read_landmark_indices(&dir.join(LANDMARKS_FILE))?;
        Self::new(stack, decoder, landmarks)
    }

    fn check_mesh(&self, neutral: &Mesh) -> Result<LandmarkFrame> {
        if neutral.num_vertices() != self.decoder.num_vertices() {
            return Err(Error::Compatibility(format!(
                "neutral mesh has {} vertices, decoder was trained for {}",
                neutral.num_vertices(),
                self.decoder.num_vertices()
            )));
        }
        extract_landmarks(neutral, &self.landmarks)
    }

    fn finish(&self, neutral: &Mesh, lm: &LandmarkFrame, landmark_disp: DisplacementSequence) -> Result<Synthesis> {
        let mesh_disp = decode_rebased(&self.decoder, &landmark_disp, lm)?;
        let meshes = apply_displacements(neutral, &mesh_disp)?;
        Ok(Synthesis { landmark_disp, mesh_disp, meshes })
    }

    /// Seeded synthesis of `len` frames; frame 0 equals `neutral`.
    pub fn synthesize(&self, neutral: &Mesh, len: usize, seed: u64) -> Result<Synthesis> {
        let lm = self.check_mesh(neutral)?;
        let disp = self.stack.generate(&lm, len, seed)?;
        self.finish(neutral, &lm, disp)
    }

    pub fn synthesize_with_noise(&self, neutral: &Mesh, noise: &NoisePyramid) -> Result<Synthesis> {
        let lm = self.check_mesh(neutral)?;
        let disp = self.stack.generate_with_noise(&lm, noise)?;
        self.finish(neutral, &lm, disp)
    }
}

/// Writes `000.obj`, `001.obj`, ... for each frame.
pub fn write_mesh_frames(dir: &Path, meshes: &MeshSequence) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = meshes.frames.len().saturating_sub(1).to_string().len().max(3);
    for t in 0..meshes.frames.len() {
        let path = dir.join(format!("{t:0width$}.obj"));
        mesh_io::write_mesh(&path, &meshes.frame_mesh(t))?;
    }
    Ok(())
}

/// One line per frame: `frame x0 y0 z0 x1 y1 z1 ...` (mm).
pub fn format_trajectory(seq: &DisplacementSequence) -> String {
    let mut out = String::new();
    for (t, f) in seq.frames().iter().enumerate() {
        out.push_str(&t.to_string());
        for p in f {
            for x in p {
                out.push(' ');
                out.push_str(&x.to_string());
            }
        }
        out.push('\n');
    }
    out
}
