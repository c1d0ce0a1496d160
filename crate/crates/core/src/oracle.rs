//! Brute-force Monte-Carlo estimators over Haar-uniform rotations (and
//! uniform unit quaternions), plus a central finite-difference gradient.
//!
//! These never touch the Bessel quadrature; they exist to check it.
//! Samples are drawn in fixed-size chunks, chunk `c` from the ChaCha stream
//! `c` of the seed, and partial sums are reduced in chunk order, so results
//! are bit-for-bit reproducible for a given `(seed, n)` regardless of thread
//! count.

use nalgebra::{Matrix3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bingham::{BinghamParams, LOG_SPHERE_AREA};
use crate::error::{Error, Result};
use crate::so3::{gamma, proper_svd, sample_unit_quaternion};

pub const MIN_SAMPLES: usize = 10_000;

/// Uniform-sampling estimators are refused beyond this concentration.
pub const MAX_ORACLE_SINGULAR_VALUE: f64 = 5.0;

const CHUNK: usize = 8192;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::Oracle(format!("{n} samples, need at least {MIN_SAMPLES}")));
    }
    Ok(())
}

fn check_concentration(a: &Matrix3<f64>) -> Result<()> {
    let s = proper_svd(a).s;
    let top = s.amax();
    if top > MAX_ORACLE_SINGULAR_VALUE {
        return Err(Error::Oracle(format!(
            "singular value {top} exceeds {MAX_ORACLE_SINGULAR_VALUE}; uniform-sampling variance too large"
        )));
    }
    Ok(())
}

/// Sum of `f(q)` over `n` uniform unit quaternions, per component.
fn sample_sums<const K: usize, F>(n: usize, seed: u64, f: F) -> [f64; K]
where
    F: Fn(&Vector4<f64>) -> [f64; K] + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partial: Vec<[f64; K]> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(n - c * CHUNK);
            let mut acc = [0.0; K];
            for _ in 0..len {
                let v = f(&sample_unit_quaternion(&mut rng));
                for k in 0..K {
                    acc[k] += v[k];
                }
            }
            acc
        })
        .collect();
    partial.iter().fold([0.0; K], |mut acc, p| {
        for k in 0..K {
            acc[k] += p[k];
        }
        acc
    })
}

/// Smooth function `g` of sample means with a delta-method standard error.
/// The second pass regenerates the same samples and accumulates the squared
/// deviations of the linearization `∇g(m) · x`.
fn delta_estimate<const K: usize, F>(
    n: usize,
    seed: u64,
    f: F,
    g: impl Fn(&[f64; K]) -> f64,
    grad: impl Fn(&[f64; K]) -> [f64; K],
) -> McEstimate
where
    F: Fn(&Vector4<f64>) -> [f64; K] + Sync,
{
    let nf = n as f64;
    let sums = sample_sums(n, seed, &f);
    let means = sums.map(|s| s / nf);
    let w = grad(&means);
    let center: f64 = (0..K).map(|k| w[k] * means[k]).sum();
    let [sq] = sample_sums(n, seed, |q| {
        let x = f(q);
        let psi: f64 = (0..K).map(|k| w[k] * x[k]).sum();
        [(psi - center) * (psi - center)]
    });
    let var = sq / (nf - 1.0);
    McEstimate {
        mean: g(&means),
        std_error: (var / nf).sqrt(),
        n_samples: n,
    }
}

/// `F(A) = E_Haar[exp(tr(Aᵀ R))]`.
pub fn mc_norm_const(a: &Matrix3<f64>, n: usize, seed: u64) -> Result<McEstimate> {
    check_samples(n)?;
    check_concentration(a)?;
    Ok(delta_estimate(
        n,
        seed,
        |q| [a.dot(&gamma(q)).exp()],
        |m| m[0],
        |_| [1.0],
    ))
}

/// `H(f) = log F̂ - E[w·t] / F̂` with `w = exp(t)`, `t = tr(Aᵀ R)`.
pub fn mc_entropy(a: &Matrix3<f64>, n: usize, seed: u64) -> Result<McEstimate> {
    check_samples(n)?;
    check_concentration(a)?;
    Ok(delta_estimate(
        n,
        seed,
        |q| {
            let t = a.dot(&gamma(q));
            let w = t.exp();
            [w, w * t]
        },
        |m| m[0].ln() - m[1] / m[0],
        |m| [1.0 / m[0] + m[1] / (m[0] * m[0]), -1.0 / m[0]],
    ))
}

/// `H(f, g) = log F̂_g - E[w_f · t_g] / F̂_f`, all three means from shared samples.
pub fn mc_cross_entropy(a_f: &Matrix3<f64>, a_g: &Matrix3<f64>, n: usize, seed: u64) -> Result<McEstimate> {
    check_samples(n)?;
    check_concentration(a_f)?;
    check_concentration(a_g)?;
    Ok(delta_estimate(
        n,
        seed,
        |q| {
            let r = gamma(q);
            let tf = a_f.dot(&r);
            let tg = a_g.dot(&r);
            let wf = tf.exp();
            [wf, tg.exp(), wf * tg]
        },
        |m| m[1].ln() - m[2] / m[0],
        |m| [m[2] / (m[0] * m[0]), 1.0 / m[1], -1.0 / m[0]],
    ))
}

/// Entrywise `E_f[R] = E_Haar[R exp(tr(AᵀR))] / F` with standard errors.
pub fn mc_expected_rotation(a: &Matrix3<f64>, n: usize, seed: u64) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    check_samples(n)?;
    check_concentration(a)?;
    let mut mean = Matrix3::zeros();
    let mut se = Matrix3::zeros();
    for idx in 0..9 {
        let (r, c) = (idx / 3, idx % 3);
        let est = delta_estimate(
            n,
            seed,
            |q| {
                let rot = gamma(q);
                let w = a.dot(&rot).exp();
                [w, w * rot[(r, c)]]
            },
            |m| m[1] / m[0],
            |m| [-m[1] / (m[0] * m[0]), 1.0 / m[0]],
        );
        mean[(r, c)] = est.mean;
        se[(r, c)] = est.std_error;
    }
    Ok((mean, se))
}

fn check_bingham(b: &BinghamParams) -> Result<()> {
    let a = crate::bingham::bingham_to_fisher(b)?;
    check_concentration(a.a())
}

/// Bingham entropy on S³ from uniform unit quaternions:
/// `H = -2π² E_unif[p log p]` with the plug-in normalizer `2π² E_unif[w]`.
pub fn mc_bingham_entropy(b: &BinghamParams, n: usize, seed: u64) -> Result<McEstimate> {
    check_samples(n)?;
    check_bingham(b)?;
    let mut est = delta_estimate(
        n,
        seed,
        |q| {
            let e = b.exponent(q);
            let w = e.exp();
            [w, w * e]
        },
        |m| m[0].ln() - m[1] / m[0],
        |m| [1.0 / m[0] + m[1] / (m[0] * m[0]), -1.0 / m[0]],
    );
    est.mean += LOG_SPHERE_AREA;
    Ok(est)
}

/// Bingham cross-entropy `-∫ p_f log p_g` on S³.
pub fn mc_bingham_cross_entropy(f: &BinghamParams, g: &BinghamParams, n: usize, seed: u64) -> Result<McEstimate> {
    check_samples(n)?;
    check_bingham(f)?;
    check_bingham(g)?;
    let mut est = delta_estimate(
        n,
        seed,
        |q| {
            let ef = f.exponent(q);
            let eg = g.exponent(q);
            let wf = ef.exp();
            [wf, eg.exp(), wf * eg]
        },
        |m| m[1].ln() - m[2] / m[0],
        |m| [m[2] / (m[0] * m[0]), 1.0 / m[1], -1.0 / m[0]],
    );
    est.mean += LOG_SPHERE_AREA;
    Ok(est)
}

/// Central differences `(f(A + h e_ij) - f(A - h e_ij)) / 2h` for all nine entries.
pub fn fd_gradient<F>(f: F, a: &Matrix3<f64>, h: f64) -> Result<Matrix3<f64>>
where
    F: Fn(&Matrix3<f64>) -> Result<f64>,
{
    let mut g = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            let mut ap = *a;
            let mut am = *a;
            ap[(r, c)] += h;
            am[(r, c)] -= h;
            let (fp, fm) = (f(&ap)?, f(&am)?);
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::NonFinite(format!("objective at entry ({r}, {c})")));
            }
            g[(r, c)] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisher::FisherParams;
    use crate::so3::sample_uniform_rotation;
    use nalgebra::Vector3;

    #[test]
    fn uniform_is_exact() {
        let z = Matrix3::zeros();
        let f = mc_norm_const(&z, MIN_SAMPLES, 1).unwrap();
        assert_eq!((f.mean, f.std_error), (1.0, 0.0));
        let h = mc_entropy(&z, MIN_SAMPLES, 1).unwrap();
        assert_eq!(h.mean, 0.0);
        let ce = mc_cross_entropy(&z, &z, MIN_SAMPLES, 1).unwrap();
        assert_eq!(ce.mean, 0.0);
    }

    #[test]
    fn refuses_bad_requests() {
        assert!(mc_norm_const(&Matrix3::zeros(), 100, 1).is_err());
        assert!(mc_norm_const(&(Matrix3::identity() * 6.0), MIN_SAMPLES, 1).is_err());
    }

    #[test]
    fn deterministic_and_seed_consistent() {
        let a = Matrix3::identity() * 2.0;
        let x = mc_norm_const(&a, 50_000, 7).unwrap();
        let y = mc_norm_const(&a, 50_000, 7).unwrap();
        assert_eq!(x, y);
        let z = mc_norm_const(&a, 50_000, 8).unwrap();
        let sigma = (x.std_error.powi(2) + z.std_error.powi(2)).sqrt();
        assert!((x.mean - z.mean).abs() < 4.0 * sigma);
    }

    #[test]
    fn norm_const_against_quadrature() {
        let a = Matrix3::identity() * 3.0;
        let est = mc_norm_const(&a, 1_000_000, 3).unwrap();
        let exact = FisherParams::new(a).unwrap().log_norm_const().exp();
        assert!((est.mean - exact).abs() < 3.0 * est.std_error, "{} vs {exact} ± {}", est.mean, est.std_error);
    }

    #[test]
    fn self_cross_entropy_matches_entropy() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(4);
        let a = sample_uniform_rotation(&mut rng).matrix() * Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 0.5));
        let h = mc_entropy(&a, 200_000, 5).unwrap();
        let ce = mc_cross_entropy(&a, &a, 200_000, 5).unwrap();
        let sigma = (h.std_error.powi(2) + ce.std_error.powi(2)).sqrt();
        assert!((h.mean - ce.mean).abs() < 4.0 * sigma + 1e-12);
    }

    #[test]
    fn fd_gradient_sanity() {
        let mut rng = <ChaCha8Rng as SeedableRng>::seed_from_u64(6);
        let r0 = *sample_uniform_rotation(&mut rng).matrix();
        let a = Matrix3::from_fn(|i, j| (i * 3 + j) as f64 * 0.3 - 1.0);
        let g = fd_gradient(|x| Ok(x.dot(&r0)), &a, 1e-4).unwrap();
        assert!((g - r0).amax() < 1e-10);
        let g = fd_gradient(|x| Ok(0.5 * x.norm_squared()), &a, 1e-4).unwrap();
        assert!((g - a).amax() < 1e-6);
        assert!(fd_gradient(|_| Ok(f64::NAN), &a, 1e-4).is_err());
    }
}
