//! Conversions between point frames (mm) and network feature matrices.

use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::geometry::{LandmarkFrame, Point3};
use crate::tensor::Matrix;

/// One row per frame, `3N` columns, each value divided by `scale`.
pub fn frames_to_matrix(frames: &[Vec<Point3>], scale: f64) -> Matrix {
    let n = frames.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(frames.len() * n * 3);
    for f in frames {
        for p in f {
            data.extend(p.iter().map(|x| x / scale));
        }
    }
    Matrix::new(frames.len(), n * 3, data)
}

pub fn matrix_to_frames(m: &Matrix, scale: f64) -> Vec<Vec<Point3>> {
    (0..m.rows())
        .map(|r| m.row(r).chunks_exact(3).map(|c| [c[0] * scale, c[1] * scale, c[2] * scale]).collect())
        .collect()
}

/// Root-mean-square coordinate over all frames; 1.0 when everything is zero.
pub fn rms_scale<'a>(frames: impl IntoIterator<Item = &'a Vec<Point3>>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for f in frames {
        for p in f {
            for x in p {
                sum += x * x;
                n += 1;
            }
        }
    }
    let rms = if n == 0 { 0.0 } else { (sum / n as f64).sqrt() };
    if rms > 0.0 && rms.is_finite() {
        rms
    } else {
        1.0
    }
}

/// Identity shape of a neutral landmark frame: centered at its centroid, divided
/// by the shared scale, flattened to a 1 x 3K row.
pub fn neutral_features(neutral: &LandmarkFrame, scale: f64) -> Result<Matrix> {
    let stats = NormalizationStats::for_frame(neutral, scale);
    let normalized = stats.normalize_frame(neutral)?;
    Ok(frames_to_matrix(&[normalized.points], 1.0))
}

/// Same as [`neutral_features`] but K x 3, one landmark per row.
pub fn neutral_tokens(neutral: &LandmarkFrame, scale: f64) -> Result<Matrix> {
    let row = neutral_features(neutral, scale)?;
    Ok(Matrix::new(neutral.num_points(), 3, row.into_data()))
}

pub fn check_points(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension(format!("{what} has {got} points, model expects {expected}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let frames = vec![vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], vec![[0.5, 0.25, -1.0], [0.0, 0.0, 8.0]]];
        let m = frames_to_matrix(&frames, 2.0);
        assert_eq!(m.shape(), (2, 6));
        assert_eq!(m.get(0, 5), 3.0);
        assert_eq!(matrix_to_frames(&m, 2.0), frames);
    }

    #[test]
    fn neutral_features_are_centered() {
        let lm = LandmarkFrame::new(vec![[10.0, 0.0, 0.0], [12.0, 2.0, 4.0]]).unwrap();
        let f = neutral_features(&lm, 2.0).unwrap();
        assert_eq!(f.data(), &[-0.5, -0.5, -1.0, 0.5, 0.5, 1.0]);
    }
}
