//! Matrix Fisher distribution on SO(3), density `exp(tr(AᵀR)) / F(A)` with
//! respect to the Haar measure normalized to total mass 1.
//!
//! The normalizer only depends on the proper singular values `S` of `A`:
//!
//! ```text
//! F(S) = ∫_{-1}^{1} ½ I0(½(s_i - s_j)(1 - u)) I0(½(s_i + s_j)(1 + u)) exp(s_k u) du
//! ```
//!
//! for any assignment of `(i, j, k)` to `(1, 2, 3)`. Both `F` and the
//! partial derivatives `∂F/∂s` are evaluated with a trapezoid rule in the
//! variable `t`, `u = tanh(½π sinh t)`, which clusters nodes at the
//! endpoints where concentrated integrands live. Every node is handled in
//! log space (scaled Bessel functions plus an extracted exponent) so that
//! `|s| <= 1000` never overflows.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Vector3};

use crate::bessel::{i0e, i1e};
use crate::error::{Error, Result};
use crate::so3::{proper_svd, ProperSvd, Rotation};

/// Largest supported magnitude of a proper singular value.
pub const MAX_SINGULAR_VALUE: f64 = 1000.0;

/// Half-width of the transformed integration interval in `t`.
const T_MAX: f64 = 3.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct QuadratureConfig {
    pub n_trapezoids: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { n_trapezoids: 511 }
    }
}

impl QuadratureConfig {
    pub fn new(n_trapezoids: usize) -> Result<Self> {
        let cfg = QuadratureConfig { n_trapezoids };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trapezoids < 3 || self.n_trapezoids % 2 == 0 {
            return Err(Error::InvalidQuadrature(self.n_trapezoids));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    u: f64,
    one_minus_u: f64,
    one_plus_u: f64,
    log_weight: f64,
}

fn log_cosh(v: f64) -> f64 {
    let a = v.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn build_nodes(n: usize) -> Vec<Node> {
    let h = 2.0 * T_MAX / n as f64;
    let half_pi = std::f64::consts::FRAC_PI_2;
    (0..=n)
        .map(|idx| {
            let t = -T_MAX + idx as f64 * h;
            let v = half_pi * t.sinh();
            let lc = log_cosh(v);
            // 1 - tanh v = e^{-v} / cosh v, 1 + tanh v = e^{v} / cosh v
            let one_minus_u = (-v - lc).exp();
            let one_plus_u = (v - lc).exp();
            let trap = if idx == 0 || idx == n { 0.5 * h } else { h };
            Node {
                u: v.tanh(),
                one_minus_u,
                one_plus_u,
                log_weight: trap.ln() + (half_pi * t.cosh()).ln() - 2.0 * lc,
            }
        })
        .collect()
}

fn default_nodes() -> &'static [Node] {
    static NODES: OnceLock<Vec<Node>> = OnceLock::new();
    NODES.get_or_init(|| build_nodes(QuadratureConfig::default().n_trapezoids))
}

fn check_range(s: &Vector3<f64>) -> Result<()> {
    for &v in s.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("singular value {v}")));
        }
        // Slack for SVD round-off on inputs built at exactly the limit.
        if v.abs() > MAX_SINGULAR_VALUE * (1.0 + 1e-12) {
            return Err(Error::OutOfRange {
                value: v,
                limit: MAX_SINGULAR_VALUE,
            });
        }
    }
    Ok(())
}

/// Result of one quadrature pass: `log F` and the ratios `(∂F/∂s_i) / F`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConst {
    pub log_f: f64,
    pub dlogf_ds: Vector3<f64>,
}

/// Evaluates the Bessel integrals with an explicit index assignment
/// `(i, j, k)` (a permutation of `0..3`). The result is the same for every
/// assignment up to quadrature error.
pub fn norm_const_with_assignment(
    s: &Vector3<f64>,
    cfg: &QuadratureConfig,
    (i, j, k): (usize, usize, usize),
) -> Result<NormConst> {
    cfg.validate()?;
    check_range(s)?;
    let mut seen = [false; 3];
    for idx in [i, j, k] {
        if idx > 2 || seen[idx] {
            return Err(Error::Structure(format!(
                "({i}, {j}, {k}) is not a permutation of (0, 1, 2)"
            )));
        }
        seen[idx] = true;
    }

    // Uniform distribution: F = 1 exactly.
    if s.iter().all(|v| *v == 0.0) {
        return Ok(NormConst {
            log_f: 0.0,
            dlogf_ds: Vector3::zeros(),
        });
    }

    let owned;
    let nodes: &[Node] = if cfg.n_trapezoids == QuadratureConfig::default().n_trapezoids {
        default_nodes()
    } else {
        owned = build_nodes(cfg.n_trapezoids);
        &owned
    };

    let alpha = 0.5 * (s[i] - s[j]);
    let beta = 0.5 * (s[i] + s[j]);
    let sk = s[k];

    // Since i0e, i1e <= 1, `e` bounds each node's log contribution; nodes
    // more than e^-40 below the largest bound are dropped.
    let bound = |node: &Node| {
        (alpha * node.one_minus_u).abs() + (beta * node.one_plus_u).abs() + sk * node.u + node.log_weight
    };
    let max_exp = nodes.iter().map(bound).fold(f64::NEG_INFINITY, f64::max);
    let (mut c, mut di, mut dj, mut dk) = (0.0, 0.0, 0.0, 0.0);
    for node in nodes {
        let e = bound(node);
        if e < max_exp - 40.0 {
            continue;
        }
        let scale = (e - max_exp).exp();
        let xa = alpha * node.one_minus_u;
        let xb = beta * node.one_plus_u;
        let (i0a, i1a) = (i0e(xa), i1e(xa));
        let (i0b, i1b) = (i0e(xb), i1e(xb));
        let base = 0.5 * i0a * i0b;
        let left = 0.25 * node.one_minus_u * i1a * i0b;
        let right = 0.25 * node.one_plus_u * i0a * i1b;
        c += scale * base;
        di += scale * (left + right);
        dj += scale * (right - left);
        dk += scale * base * node.u;
    }

    let log_f = max_exp + c.ln();
    let mut d = Vector3::zeros();
    d[i] = di / c;
    d[j] = dj / c;
    d[k] = dk / c;
    if !log_f.is_finite() || d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("normalizer for S = {:?}", s.as_slice())));
    }
    Ok(NormConst { log_f, dlogf_ds: d })
}

/// `log F` and `(∂F/∂s)/F` with the cyclic assignment `(i, j, k) = (2, 3, 1)`,
/// which puts the largest singular value in the exponential factor.
pub fn norm_const(s: &Vector3<f64>, cfg: &QuadratureConfig) -> Result<NormConst> {
    norm_const_with_assignment(s, cfg, (1, 2, 0))
}

pub fn log_norm_const(s: &Vector3<f64>, cfg: &QuadratureConfig) -> Result<f64> {
    Ok(norm_const(s, cfg)?.log_f)
}

pub fn dlogf_ds(s: &Vector3<f64>, cfg: &QuadratureConfig) -> Result<Vector3<f64>> {
    Ok(norm_const(s, cfg)?.dlogf_ds)
}

/// Parameters of a matrix Fisher distribution with the proper SVD, `log F`
/// and the derivative ratios computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherParams {
    a: Matrix3<f64>,
    svd: ProperSvd,
    log_f: f64,
    dlogf_ds: Vector3<f64>,
    cfg: QuadratureConfig,
}

impl FisherParams {
    pub fn new(a: Matrix3<f64>) -> Result<Self> {
        Self::with_config(a, QuadratureConfig::default())
    }

    pub fn with_config(a: Matrix3<f64>, cfg: QuadratureConfig) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter matrix".into()));
        }
        let svd = proper_svd(&a);
        let nc = norm_const(&svd.s, &cfg)?;
        Ok(FisherParams {
            a,
            svd,
            log_f: nc.log_f,
            dlogf_ds: nc.dlogf_ds,
            cfg,
        })
    }

    /// Uniform distribution on SO(3).
    pub fn uniform() -> Self {
        Self::new(Matrix3::zeros()).expect("zero parameter is always valid")
    }

    pub fn a(&self) -> &Matrix3<f64> {
        &self.a
    }

    pub fn svd(&self) -> &ProperSvd {
        &self.svd
    }

    pub fn singular_values(&self) -> &Vector3<f64> {
        &self.svd.s
    }

    pub fn log_norm_const(&self) -> f64 {
        self.log_f
    }

    pub fn dlogf_ds(&self) -> &Vector3<f64> {
        &self.dlogf_ds
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.cfg
    }

    /// Density argmax `U diag(1, 1, det(UV)) Vᵀ`; with a proper SVD this is `U Vᵀ`.
    pub fn mode(&self) -> Rotation {
        Rotation::from_matrix_unchecked(self.svd.u.matrix() * self.svd.v.matrix().transpose())
    }

    pub fn log_pdf(&self, r: &Rotation) -> f64 {
        self.a.dot(r.matrix()) - self.log_f
    }

    /// Differential entropy in nats, relative to the normalized Haar measure.
    /// Computed on the equivalent Bingham distribution.
    pub fn entropy(&self) -> f64 {
        crate::bingham::fisher_to_bingham(self).entropy() - crate::bingham::LOG_SPHERE_AREA
    }

    /// `E[R] = U diag(∂log F/∂s) Vᵀ`; generally not a rotation.
    pub fn expected_rotation(&self) -> Matrix3<f64> {
        self.svd.u.matrix() * Matrix3::from_diagonal(&self.dlogf_ds) * self.svd.v.matrix().transpose()
    }

    /// `∇_A log F(A)`, equal to `E[R]` for an exponential family.
    pub fn grad_log_norm_const(&self) -> Matrix3<f64> {
        self.expected_rotation()
    }

    /// Same distribution shape with `A` scaled by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::with_config(self.a * k, self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::sample_uniform_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PERMUTATIONS: [(usize, usize, usize); 6] =
        [(0, 1, 2), (1, 2, 0), (2, 0, 1), (1, 0, 2), (0, 2, 1), (2, 1, 0)];

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn fine() -> QuadratureConfig {
        QuadratureConfig::new(8191).unwrap()
    }

    fn random_s(rng: &mut impl Rng, max: f64) -> Vector3<f64> {
        let mut v = [rng.random_range(0.0..max), rng.random_range(0.0..max), rng.random_range(0.0..max)];
        v.sort_by(|a, b| b.total_cmp(a));
        if rng.random_bool(0.3) {
            v[2] = -v[2];
        }
        Vector3::from(v)
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::new(511).is_ok());
        assert!(QuadratureConfig::new(3).is_ok());
        assert!(QuadratureConfig::new(1).is_err());
        assert!(QuadratureConfig::new(512).is_err());
    }

    #[test]
    fn uniform_normalizer() {
        let nc = norm_const(&Vector3::zeros(), &cfg()).unwrap();
        assert!(nc.log_f.abs() < 1e-13, "{}", nc.log_f);
        assert!(nc.dlogf_ds.norm() < 1e-13);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = log_norm_const(&Vector3::new(1000.5, 0.0, 0.0), &cfg());
        assert!(matches!(err, Err(Error::OutOfRange { .. })));
        assert!(log_norm_const(&Vector3::new(1000.0, 1000.0, -1000.0), &cfg()).is_ok());
    }

    #[test]
    fn assignment_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cases = vec![
            Vector3::new(5.0, 5.0, 5.0),
            Vector3::new(20.0, 1.0, 1.0),
            Vector3::new(50.0, 50.0, -50.0),
            Vector3::new(300.0, 2.0, -1.0),
        ];
        for _ in 0..20 {
            cases.push(random_s(&mut rng, 50.0));
        }
        for s in cases {
            let base = norm_const_with_assignment(&s, &cfg(), PERMUTATIONS[0]).unwrap();
            for p in &PERMUTATIONS[1..] {
                let other = norm_const_with_assignment(&s, &cfg(), *p).unwrap();
                assert!(
                    (other.log_f - base.log_f).abs() < 1e-10 * base.log_f.abs().max(1.0),
                    "S={s:?} {p:?}: {} vs {}",
                    other.log_f,
                    base.log_f
                );
                assert!((other.dlogf_ds - base.dlogf_ds).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn refinement_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut cases = vec![Vector3::new(20.0, 1.0, 1.0), Vector3::new(50.0, 50.0, 50.0)];
        for _ in 0..30 {
            cases.push(random_s(&mut rng, 50.0));
        }
        for s in cases {
            let coarse = log_norm_const(&s, &cfg()).unwrap();
            let refined = log_norm_const(&s, &fine()).unwrap();
            let rel = (coarse - refined).abs() / refined.abs().max(1e-300);
            assert!(rel < 1e-8 || (coarse - refined).abs() < 1e-14, "S={s:?}: rel {rel:e}");
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-4;
        for s in [Vector3::new(5.0, 5.0, 5.0), Vector3::new(6.0, 3.0, 1.0), Vector3::new(30.0, 4.0, -2.0)] {
            let d = dlogf_ds(&s, &cfg()).unwrap();
            for i in 0..3 {
                let mut sp = s;
                let mut sm = s;
                sp[i] += h;
                sm[i] -= h;
                let fd = (log_norm_const(&sp, &cfg()).unwrap() - log_norm_const(&sm, &cfg()).unwrap()) / (2.0 * h);
                assert!((fd - d[i]).abs() < 1e-5, "S={s:?} i={i}: {fd} vs {}", d[i]);
            }
        }
    }

    #[test]
    fn derivative_ratios_bounded_and_monotone() {
        let mut prev = -1.0;
        for s in [1.0, 5.0, 20.0, 100.0, 200.0] {
            let d = dlogf_ds(&Vector3::new(s, s, s), &cfg()).unwrap();
            assert!(d.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(d[0] > prev, "not increasing at s={s}");
            assert!((d[0] - d[1]).abs() < 1e-12 && (d[1] - d[2]).abs() < 1e-12);
            prev = d[0];
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn large_concentration_is_finite() {
        for s in [
            Vector3::new(500.0, 500.0, 500.0),
            Vector3::new(500.0, 0.0, 0.0),
            Vector3::new(1000.0, 990.0, -980.0),
            Vector3::new(1000.0, 1000.0, 1000.0),
        ] {
            let nc = norm_const(&s, &cfg()).unwrap();
            assert!(nc.log_f.is_finite());
            assert!(nc.dlogf_ds.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn mode_cases() {
        assert_eq!(*FisherParams::new(Matrix3::identity()).unwrap().mode().matrix(), Matrix3::identity());
        let flip = FisherParams::new(Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))).unwrap();
        assert!((flip.mode().matrix() - Matrix3::identity()).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = sample_uniform_rotation(&mut rng);
        let p = FisherParams::new(g.matrix() * Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0))).unwrap();
        assert!((p.mode().matrix() - g.matrix()).norm() < 1e-9);
        let best = p.log_pdf(&p.mode());
        for _ in 0..100_000 {
            assert!(p.log_pdf(&sample_uniform_rotation(&mut rng)) <= best);
        }
    }

    #[test]
    fn log_pdf_cases() {
        let u = FisherParams::uniform();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let r = sample_uniform_rotation(&mut rng);
        assert_eq!(u.log_pdf(&r), 0.0);

        let p = FisherParams::new(Matrix3::identity() * 5.0).unwrap();
        let lf = log_norm_const(&Vector3::new(5.0, 5.0, 5.0), &cfg()).unwrap();
        assert!((p.log_pdf(&Rotation::identity()) - (15.0 - lf)).abs() < 1e-12);
    }

    #[test]
    fn entropy_ordering() {
        assert!(FisherParams::uniform().entropy().abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let h = FisherParams::new(Matrix3::identity() * s).unwrap().entropy();
            assert!(h < prev || s == 0.0);
            prev = h;
        }
    }

    #[test]
    fn expected_rotation_cases() {
        assert!(FisherParams::uniform().expected_rotation().norm() < 1e-13);
        let p = FisherParams::new(Matrix3::identity() * 200.0).unwrap();
        assert!((p.expected_rotation() - Matrix3::identity()).amax() < 0.01);
        let p = FisherParams::new(Matrix3::identity() * 5.0).unwrap();
        let e = p.expected_rotation();
        assert!((e - Matrix3::from_diagonal(&Vector3::repeat(e[(0, 0)]))).norm() < 1e-12);
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let a = Matrix3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let g = sample_uniform_rotation(&mut rng);
            let h = sample_uniform_rotation(&mut rng);
            let p = FisherParams::new(a).unwrap();
            let q = FisherParams::new(g.matrix() * a * h.matrix()).unwrap();
            assert!((p.log_norm_const() - q.log_norm_const()).abs() < 1e-9);
            // gradient equivariance
            let lhs = q.grad_log_norm_const();
            let rhs = g.matrix() * p.grad_log_norm_const() * h.matrix();
            assert!((lhs - rhs).amax() < 1e-9);
        }
    }
}
