//! Self-contained verification suite: analytic quantities against the
//! Monte-Carlo oracles, plus the structural identities each module promises.
//! Output depends only on the seed and the sample count.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bingham::{fisher_to_bingham, LOG_SPHERE_AREA};
use crate::error::Result;
use crate::fisher::{FisherParams, QuadratureConfig};
use crate::losses::{cross_entropy_erform, cross_entropy_qform, nll_supervised};
use crate::oracle::{fd_gradient, mc_bingham_entropy, mc_cross_entropy, mc_entropy, mc_expected_rotation, mc_norm_const};
use crate::so3::{gamma, sample_unit_quaternion, sample_uniform_rotation};

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Oracle sample count.
    pub n_samples: usize,
}

impl VerifyOptions {
    pub fn fast(seed: u64) -> Self {
        VerifyOptions { seed, n_samples: 100_000 }
    }

    pub fn full(seed: u64) -> Self {
        VerifyOptions { seed, n_samples: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct VerifyRow {
    pub quantity: String,
    pub analytic: f64,
    /// Oracle estimate, or the reference value for identity checks.
    pub oracle: f64,
    /// Oracle standard error; `None` for deterministic checks.
    pub sigma: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl VerifyRow {
    fn oracle(quantity: String, analytic: f64, oracle: f64, sigma: f64, tolerance: f64) -> Self {
        VerifyRow {
            quantity,
            analytic,
            oracle,
            sigma: Some(sigma),
            tolerance,
            pass: (analytic - oracle).abs() <= tolerance,
        }
    }

    /// A deterministic error measure that must stay below `tolerance`.
    fn bound(quantity: &str, error: f64, tolerance: f64) -> Self {
        VerifyRow {
            quantity: quantity.into(),
            analytic: error,
            oracle: 0.0,
            sigma: None,
            tolerance,
            pass: error <= tolerance,
        }
    }
}

pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<40} {:>16} {:>16} {:>11} {:>11}  verdict\n",
            "quantity", "analytic", "oracle", "sigma", "tol"
        );
        for r in &self.rows {
            let sigma = r.sigma.map_or("-".to_string(), |s| format!("{s:.3e}"));
            out.push_str(&format!(
                "{:<40} {:>16.9e} {:>16.9e} {:>11} {:>11.3e}  {}\n",
                r.quantity,
                r.analytic,
                r.oracle,
                sigma,
                r.tolerance,
                if r.pass { "PASS" } else { "FAIL" }
            ));
        }
        let failed = self.rows.iter().filter(|r| !r.pass).count();
        out.push_str(&format!("{} checks, {} failed\n", self.rows.len(), failed));
        out
    }
}

/// `U diag(s) Vᵀ` with Haar-random `U`, `V` and `s_i` uniform in `[-max, max]`.
fn random_a<R: Rng>(rng: &mut R, max: f64) -> Matrix3<f64> {
    let s = Vector3::from_fn(|_, _| rng.random_range(-max..max));
    sample_uniform_rotation(rng).matrix() * Matrix3::from_diagonal(&s) * sample_uniform_rotation(rng).matrix().transpose()
}

pub fn run_suite(opts: VerifyOptions) -> Result<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = opts.n_samples;
    let mut rows = Vec::new();
    let mut oracle_seed = opts.seed.wrapping_mul(1000);
    let mut next_seed = || {
        oracle_seed += 1;
        oracle_seed
    };

    for i in 0..4 {
        let a = random_a(&mut rng, 3.0);
        let f = FisherParams::new(a)?.log_norm_const().exp();
        let mc = mc_norm_const(&a, n, next_seed())?;
        let tol = (0.01 * f).max(3.0 * mc.std_error);
        rows.push(VerifyRow::oracle(format!("F(A) #{i}"), f, mc.mean, mc.std_error, tol));
    }
    for i in 0..4 {
        let a = random_a(&mut rng, 3.0);
        let h = FisherParams::new(a)?.entropy();
        let mc = mc_entropy(&a, n, next_seed())?;
        let tol = (0.02 * h.abs()).max(4.0 * mc.std_error);
        rows.push(VerifyRow::oracle(format!("entropy #{i}"), h, mc.mean, mc.std_error, tol));
    }
    for i in 0..4 {
        let (af, ag) = (random_a(&mut rng, 3.0), random_a(&mut rng, 3.0));
        let ce = cross_entropy_qform(&FisherParams::new(af)?, &FisherParams::new(ag)?).value;
        let mc = mc_cross_entropy(&af, &ag, n, next_seed())?;
        let tol = (0.02 * ce.abs()).max(4.0 * mc.std_error);
        rows.push(VerifyRow::oracle(format!("cross-entropy #{i}"), ce, mc.mean, mc.std_error, tol));
    }
    for i in 0..2 {
        let a = random_a(&mut rng, 3.0);
        let er = FisherParams::new(a)?.expected_rotation();
        let (mean, se) = mc_expected_rotation(&a, n, next_seed())?;
        let z = |k: usize| (er[k] - mean[k]).abs() / se[k].max(1e-300);
        let k = (0..9).max_by(|&x, &y| z(x).total_cmp(&z(y))).expect("nine entries");
        rows.push(VerifyRow::oracle(format!("E[R] #{i} worst entry"), er[k], mean[k], se[k], 4.0 * se[k] + 1e-12));
    }
    for i in 0..2 {
        let b = fisher_to_bingham(&FisherParams::new(random_a(&mut rng, 3.0))?);
        let mc = mc_bingham_entropy(&b, n, next_seed())?;
        let h = b.entropy();
        let tol = (0.02 * h.abs()).max(4.0 * mc.std_error);
        rows.push(VerifyRow::oracle(format!("Bingham entropy #{i}"), h, mc.mean, mc.std_error, tol));
    }

    rows.extend(identity_checks(&mut rng)?);
    Ok(VerifyReport { rows })
}

fn identity_checks(rng: &mut ChaCha8Rng) -> Result<Vec<VerifyRow>> {
    let fine = QuadratureConfig::new(8191)?;
    let mut refine: f64 = 0.0;
    let mut exponent: f64 = 0.0;
    let mut bridge: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut self_ce: f64 = 0.0;
    let mut gibbs = f64::INFINITY;
    let mut grad: f64 = 0.0;
    for _ in 0..10 {
        let a = random_a(rng, 50.0);
        let f = FisherParams::new(a)?;
        let g = FisherParams::with_config(a, fine)?;
        refine = refine.max(((f.log_norm_const() - g.log_norm_const()) / g.log_norm_const().abs().max(1.0)).abs());

        let b = fisher_to_bingham(&f);
        for _ in 0..10 {
            let q: Vector4<f64> = sample_unit_quaternion(rng);
            exponent = exponent.max((a.dot(&gamma(&q)) - b.exponent(&q)).abs());
        }
        bridge = bridge.max((f.entropy() - (b.entropy() - LOG_SPHERE_AREA)).abs());

        let other = FisherParams::new(random_a(rng, 20.0))?;
        let (q, e) = (cross_entropy_qform(&f, &other).value, cross_entropy_erform(&f, &other).value);
        dual = dual.max((q - e).abs() / e.abs().max(1.0));
        self_ce = self_ce.max((cross_entropy_erform(&f, &f).value - f.entropy()).abs());
        gibbs = gibbs.min(e - f.entropy());
    }
    for _ in 0..5 {
        let a = random_a(rng, 10.0);
        let y = sample_uniform_rotation(rng);
        let fd = fd_gradient(|x| Ok(nll_supervised(&FisherParams::new(*x)?, &y).value), &a, 1e-4)?;
        let an = nll_supervised(&FisherParams::new(a)?, &y).grad_a;
        for k in 0..9 {
            grad = grad.max((an[k] - fd[k]).abs() / an[k].abs().max(1e-2));
        }
    }
    Ok(vec![
        VerifyRow::bound("quadrature 511 vs 8191 (rel)", refine, 1e-8),
        VerifyRow::bound("Fisher/Bingham exponent identity", exponent, 1e-9),
        VerifyRow::bound("entropy bridge H_F = H_B - log 2pi^2", bridge, 1e-9),
        VerifyRow::bound("cross-entropy two paths (rel)", dual, 1e-6),
        VerifyRow::bound("H(f,f) - H(f)", self_ce, 1e-9),
        VerifyRow {
            quantity: "Gibbs min H(f,g) - H(f)".into(),
            analytic: gibbs,
            oracle: 0.0,
            sigma: None,
            tolerance: 0.0,
            pass: gibbs >= 0.0,
        },
        VerifyRow::bound("NLL gradient vs finite differences", grad, 1e-4),
    ])
}
