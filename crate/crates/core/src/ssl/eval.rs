use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::{FisherParams, QuadratureConfig};
use crate::so3::{geodesic_angle, Rotation};
use crate::ssl::data::{batch_matrix, SyntheticSample};
use crate::ssl::net::{head_to_a, Regressor};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_error_deg: f64,
    pub median_error_deg: f64,
    pub acc_30deg: f64,
    pub entropy_error_spearman: f64,
    pub pseudo_label_coverage_history: Vec<f64>,
    pub pseudo_label_error_history: Vec<f64>,
}

/// Distribution predicted for each sample.
pub fn predict(model: &Regressor, samples: &[SyntheticSample], quad: QuadratureConfig) -> Result<Vec<FisherParams>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let dim = model.shape().input;
    let x = batch_matrix(samples.iter().map(|s| s.features.as_slice()), dim);
    let out = model.forward(x)?;
    (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let (a, _) = head_to_a(model.head(), &out.row(i))?;
            FisherParams::with_config(a, quad)
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Metrics of predicted distributions against ground truth; the prediction
/// is the mode.
pub fn evaluate_distributions(dists: &[FisherParams], truth: &[Rotation]) -> Result<EvalReport> {
    if dists.is_empty() || dists.len() != truth.len() {
        return Err(Error::Shape {
            expected: truth.len().max(1),
            got: dists.len(),
        });
    }
    let (errors, entropies): (Vec<f64>, Vec<f64>) = dists
        .par_iter()
        .zip(truth)
        .map(|(d, t)| (geodesic_angle(&d.mode(), t), d.entropy()))
        .unzip();
    let n = errors.len() as f64;
    Ok(EvalReport {
        mean_error_deg: errors.iter().sum::<f64>() / n,
        median_error_deg: median(&errors),
        acc_30deg: errors.iter().filter(|e| **e <= 30.0).count() as f64 / n,
        entropy_error_spearman: spearman(&entropies, &errors),
        ..Default::default()
    })
}

pub fn evaluate(model: &Regressor, test: &[SyntheticSample], quad: QuadratureConfig) -> Result<EvalReport> {
    let truth: Vec<Rotation> = test
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Config("test sample without label".into())))
        .collect::<Result<_>>()?;
    evaluate_distributions(&predict(model, test, quad)?, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_uniform_rotation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<_> = (0..100).map(|_| sample_uniform_rotation(&mut rng)).collect();
        let dists: Vec<_> = truth.iter().map(|r| FisherParams::new(r.matrix() * 50.0).unwrap()).collect();
        let rep = evaluate_distributions(&dists, &truth).unwrap();
        assert!(rep.mean_error_deg < 1e-5);
        assert_eq!(rep.acc_30deg, 1.0);
    }

    #[test]
    fn uniform_stub_error() {
        // Fixed guess vs Haar truth: E[angle] = π/2 + 2/π rad.
        let expected = (std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI).to_degrees();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth: Vec<_> = (0..10_000).map(|_| sample_uniform_rotation(&mut rng)).collect();
        let dists = vec![FisherParams::uniform(); truth.len()];
        let rep = evaluate_distributions(&dists, &truth).unwrap();
        assert!((rep.mean_error_deg - expected).abs() < 2.0, "{}", rep.mean_error_deg);
        assert!((rep.mean_error_deg - 126.9).abs() < 2.0);
        assert_eq!(rep.entropy_error_spearman, 0.0);
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[1.0, 1e6, 2e6, 3e9]) - 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
