//! Synthetic rotation regression: the first two rows of `R` applied to a
//! fixed set of cube-corner keypoints, flattened, plus Gaussian noise.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::so3::{sample_uniform_rotation, Rotation};

const S: f64 = 0.577_350_269_189_625_8; // 1/√3

/// Cube corners on the unit sphere. The first four form a regular
/// tetrahedron, so any prefix of length >= 4 spans 3D.
pub const CUBE_CORNERS: [[f64; 3]; 8] = [
    [S, S, S],
    [S, -S, -S],
    [-S, S, -S],
    [-S, -S, S],
    [-S, -S, -S],
    [-S, S, S],
    [S, -S, S],
    [S, S, -S],
];

pub fn keypoint_template(k: usize) -> Result<Vec<Vector3<f64>>> {
    if !(4..=CUBE_CORNERS.len()).contains(&k) {
        return Err(Error::Config(format!("keypoints {k} outside 4..=8")));
    }
    Ok(CUBE_CORNERS[..k].iter().map(|p| Vector3::from(*p)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[x_1, y_1, x_2, y_2, ...]`, length `2K`.
    pub features: Vec<f64>,
    pub label: Option<Rotation>,
}

/// Noise-free features of `r`.
pub fn project(r: &Rotation, template: &[Vector3<f64>]) -> Vec<f64> {
    let m = r.matrix();
    template
        .iter()
        .flat_map(|p| {
            let q = m * p;
            [q[0], q[1]]
        })
        .collect()
}

pub fn gen_synthetic_dataset<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<SyntheticSample>> {
    let template = keypoint_template(k)?;
    let normal = Normal::new(0.0, noise).map_err(|e| Error::Config(format!("noise {noise}: {e}")))?;
    Ok((0..n)
        .map(|_| {
            let r = sample_uniform_rotation(rng);
            let mut features = project(&r, &template);
            for f in &mut features {
                *f += normal.sample(rng);
            }
            SyntheticSample {
                features,
                label: Some(r),
            }
        })
        .collect())
}

/// Splits off the labels. The returned rotations are for logging pseudo-label
/// quality only and never reach the training loss.
pub fn hide_labels(samples: Vec<SyntheticSample>) -> (Vec<SyntheticSample>, Vec<Option<Rotation>>) {
    samples
        .into_iter()
        .map(|s| {
            (
                SyntheticSample {
                    features: s.features,
                    label: None,
                },
                s.label,
            )
        })
        .unzip()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub noise: f64,
    pub dropout: f64,
}

impl Augmentation {
    pub const NONE: Augmentation = Augmentation {
        noise: 0.0,
        dropout: 0.0,
    };

    /// Adds `N(0, noise²)` to every coordinate, then zeroes each coordinate
    /// with probability `dropout`. Draws are made even when a parameter is
    /// zero so the number of draws depends only on the input shape.
    pub fn apply<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Vec<f64> {
        features
            .iter()
            .map(|&f| {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                let u: f64 = rng.random();
                if u < self.dropout {
                    0.0
                } else {
                    f + self.noise * z
                }
            })
            .collect()
    }
}

/// Stacks feature vectors as rows.
pub fn batch_matrix<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::zeros(n, dim);
    for (i, row) in rows.enumerate() {
        assert_eq!(row.len(), dim, "feature length");
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}
