//! Bingham distribution on S³ and its exact correspondence with the matrix
//! Fisher distribution.
//!
//! Parameters are stored in the trace-zero convention: `Z = (z1, z2, z3, z4)`
//! with `Σ z = 0`, density `exp(qᵀ M Z Mᵀ q) / F_B` with respect to the
//! Lebesgue (surface) measure on S³. For a Fisher parameter with proper SVD
//! `U diag(s) Vᵀ` the equivalent Bingham has
//!
//! ```text
//! z1 = s1 - s2 - s3,  z2 = s2 - s1 - s3,  z3 = s3 - s1 - s2,  z4 = s1 + s2 + s3
//! m_i = γ⁻¹(U E_i Vᵀ)
//! ```
//!
//! and `F_B = 2π² F_F`. Normalizers and moments are never integrated on S³
//! directly; they come from the Fisher-side Bessel quadrature.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::fisher::FisherParams;
use crate::so3::{gamma, gamma_inv, quat_basis, QUAT_BASIS_DIAG};

/// `ln(2π²)`, the log surface area of S³.
pub const LOG_SPHERE_AREA: f64 = 2.982_606_952_258_745_7;

#[derive(Clone, Debug, PartialEq)]
pub struct BinghamParams {
    m: Matrix4<f64>,
    z: Vector4<f64>,
    log_f: f64,
    /// `E[(m_i · q)²] = (∂F_B/∂z_i) / F_B`; sums to one.
    moments: Vector4<f64>,
}

/// Raw 7-vector emitted by a Bingham regression head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BirdalOutput {
    pub o1: Vector4<f64>,
    pub o2: Vector3<f64>,
}

impl BirdalOutput {
    pub fn from_slice(raw: &[f64]) -> Result<Self> {
        if raw.len() != 7 {
            return Err(Error::Shape {
                expected: 7,
                got: raw.len(),
            });
        }
        Ok(BirdalOutput {
            o1: Vector4::new(raw[0], raw[1], raw[2], raw[3]),
            o2: Vector3::new(raw[4], raw[5], raw[6]),
        })
    }
}

/// Second-moment ratios of the Bingham columns `m_i`, from the Fisher mean
/// `E[R]`: `(m_i · q)² = (1 + tr(γ(m_i)ᵀ R)) / 4`.
fn column_moments(m: &Matrix4<f64>, expected_rotation: &Matrix3<f64>) -> Vector4<f64> {
    Vector4::from_fn(|i, _| {
        let col: Vector4<f64> = m.column(i).into_owned();
        (1.0 + gamma(&col).dot(expected_rotation)) / 4.0
    })
}

impl BinghamParams {
    /// General constructor. `M` must be orthogonal; `Z` may use any additive
    /// convention (it is shifted to trace zero, the shift being absorbed by
    /// the normalizer).
    pub fn new(m: Matrix4<f64>, z: Vector4<f64>) -> Result<Self> {
        let orth_err = (m.transpose() * m - Matrix4::identity()).norm();
        if !(orth_err <= 1e-9) {
            return Err(Error::Structure(format!(
                "M is not orthogonal (error {orth_err:.3e})"
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Bingham concentration".into()));
        }
        let z = z.add_scalar(-z.mean());
        let fisher = FisherParams::new(equivalent_fisher_matrix(&m, &z))?;
        Ok(BinghamParams {
            m,
            z,
            log_f: LOG_SPHERE_AREA + fisher.log_norm_const(),
            moments: column_moments(&m, &fisher.expected_rotation()),
        })
    }

    pub fn m(&self) -> &Matrix4<f64> {
        &self.m
    }

    /// Trace-zero concentrations.
    pub fn z(&self) -> &Vector4<f64> {
        &self.z
    }

    /// `log F_B` (Lebesgue measure on S³).
    pub fn log_norm_const(&self) -> f64 {
        self.log_f
    }

    /// `(∂F_B/∂z_i) / F_B`.
    pub fn dlogf_dz(&self) -> &Vector4<f64> {
        &self.moments
    }

    /// Index of the modal column (largest `z`).
    pub fn mode_index(&self) -> usize {
        self.z.imax()
    }

    pub fn mode(&self) -> Vector4<f64> {
        self.m.column(self.mode_index()).into_owned()
    }

    /// Columns reordered by decreasing `z`, with `Z = diag(0, z1, z2, z3)`,
    /// `0 >= z1 >= z2 >= z3`.
    pub fn main_convention(&self) -> (Matrix4<f64>, Vector3<f64>) {
        let mut order = [0usize, 1, 2, 3];
        order.sort_by(|&a, &b| self.z[b].total_cmp(&self.z[a]));
        let top = self.z[order[0]];
        let mut m = Matrix4::zeros();
        for (dst, &src) in order.iter().enumerate() {
            m.set_column(dst, &self.m.column(src));
        }
        (
            m,
            Vector3::new(self.z[order[1]] - top, self.z[order[2]] - top, self.z[order[3]] - top),
        )
    }

    pub fn exponent(&self, q: &Vector4<f64>) -> f64 {
        let proj = self.m.transpose() * q;
        proj.component_mul(&proj).dot(&self.z)
    }

    pub fn log_pdf(&self, q: &Vector4<f64>) -> f64 {
        self.exponent(q) - self.log_f
    }

    /// `log F_B - Σ z_i (∂F_B/∂z_i) / F_B`.
    pub fn entropy(&self) -> f64 {
        self.log_f - self.z.dot(&self.moments)
    }

    /// `H(self, g) = -∫ self · log g`.
    pub fn cross_entropy(&self, g: &BinghamParams) -> f64 {
        bingham_cross_entropy(self, g)
    }
}

/// `A = ¼ Σ z_i γ(m_i)` for trace-zero `z`; satisfies
/// `tr(Aᵀ γ(q)) = qᵀ M Z Mᵀ q` for every unit `q`.
fn equivalent_fisher_matrix(m: &Matrix4<f64>, z: &Vector4<f64>) -> Matrix3<f64> {
    (0..4).fold(Matrix3::zeros(), |acc, i| {
        let col: Vector4<f64> = m.column(i).into_owned();
        acc + gamma(&col) * (0.25 * z[i])
    })
}

pub fn fisher_to_bingham(f: &FisherParams) -> BinghamParams {
    let svd = f.svd();
    let s = svd.s;
    let z = Vector4::new(
        s[0] - s[1] - s[2],
        s[1] - s[0] - s[2],
        s[2] - s[0] - s[1],
        s[0] + s[1] + s[2],
    );
    let basis = quat_basis();
    let mut m = Matrix4::zeros();
    for (i, e) in basis.iter().enumerate() {
        let r = svd.u.matrix() * e * svd.v.matrix().transpose();
        m.set_column(i, &gamma_inv(&r));
    }
    if m.determinant() < 0.0 {
        m.column_mut(3).neg_mut();
    }
    // E[(m_i·q)²] = (1 + Σ_k (E_i)_kk d_k) / 4 in the SVD frame.
    let d = f.dlogf_ds();
    let moments = Vector4::from_fn(|i, _| {
        let diag = Vector3::from(QUAT_BASIS_DIAG[i]);
        (1.0 + diag.dot(d)) / 4.0
    });
    BinghamParams {
        m,
        z,
        log_f: LOG_SPHERE_AREA + f.log_norm_const(),
        moments,
    }
}

pub fn bingham_to_fisher(b: &BinghamParams) -> Result<FisherParams> {
    FisherParams::new(equivalent_fisher_matrix(&b.m, &b.z))
}

pub fn bingham_log_pdf(b: &BinghamParams, q: &Vector4<f64>) -> f64 {
    b.log_pdf(q)
}

pub fn bingham_entropy(b: &BinghamParams) -> f64 {
    b.entropy()
}

/// Closed-form cross-entropy between two Bingham distributions, written
/// around the mode `μ_f` of `f`: with `b_i = μ_f · m_{g,i}` and
/// `a_ij = m_{f,j} · m_{g,i}` over the dispersion columns `j` of `f`,
///
/// `H(f, g) = log F_g - Σ_i z_{g,i} (b_i² + Σ_j (a_ij² - b_i²) E_f[(m_{f,j}·q)²])`.
pub fn bingham_cross_entropy(f: &BinghamParams, g: &BinghamParams) -> f64 {
    let mode = f.mode_index();
    let mu = f.m.column(mode);
    let mut expect = 0.0;
    for i in 0..4 {
        let mg = g.m.column(i);
        let b = mu.dot(&mg);
        let b2 = b * b;
        let mut second = b2;
        for j in (0..4).filter(|&j| j != mode) {
            let a = f.m.column(j).dot(&mg);
            second += (a * a - b2) * f.moments[j];
        }
        expect += g.z[i] * second;
    }
    g.log_f - expect
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The orthogonal matrix built from a unit 4-vector `n`; its first column
/// is `n` itself.
pub fn birdal_matrix(n: &Vector4<f64>) -> Matrix4<f64> {
    let (a, b, c, d) = (n[0], n[1], n[2], n[3]);
    Matrix4::new(
        a, -b, -c, d, //
        b, a, d, c, //
        c, -d, a, -b, //
        d, c, -b, -a,
    )
}

/// Main-convention concentrations `(z1, z2, z3)` from softplus accumulation.
pub fn birdal_concentrations(o2: &Vector3<f64>) -> Vector3<f64> {
    let c = o2.map(softplus);
    Vector3::new(-c[0], -c[0] - c[1], -c[0] - c[1] - c[2])
}

fn unit_o1(o1: &Vector4<f64>) -> Result<(Vector4<f64>, f64)> {
    let r = o1.norm();
    if !(r >= 1e-12) {
        return Err(Error::Degenerate(r));
    }
    Ok((o1 / r, r))
}

pub fn birdal_construct(o: &BirdalOutput) -> Result<BinghamParams> {
    let (n, _) = unit_o1(&o.o1)?;
    let zm = birdal_concentrations(&o.o2);
    BinghamParams::new(birdal_matrix(&n), Vector4::new(0.0, zm[0], zm[1], zm[2]))
}

/// Equivalent Fisher parameter of a Birdal head output together with the
/// Jacobian `∂vec(A)/∂o` (row-major `vec`, 9×7).
pub fn birdal_fisher_jacobian(o: &BirdalOutput) -> Result<(Matrix3<f64>, SMatrix<f64, 9, 7>)> {
    let (n, r) = unit_o1(&o.o1)?;
    let m = birdal_matrix(&n);
    let zm = birdal_concentrations(&o.o2);
    let z = Vector4::new(0.0, zm[0], zm[1], zm[2]);
    // Σ γ(m_i) = 0 for orthonormal M, so the trace shift does not enter A.
    let a = equivalent_fisher_matrix(&m, &z);

    let cols: [Vector4<f64>; 4] = std::array::from_fn(|i| m.column(i).into_owned());
    let mut jac = SMatrix::<f64, 9, 7>::zeros();

    // d A / d n_c: each column is linear in n, γ is quadratic.
    let mut da_dn = SMatrix::<f64, 9, 4>::zeros();
    for c in 0..4 {
        let mut e = Vector4::zeros();
        e[c] = 1.0;
        let dm = birdal_matrix(&e);
        let mut da = Matrix3::zeros();
        for i in 0..4 {
            let dcol: Vector4<f64> = dm.column(i).into_owned();
            let dgamma = (gamma_homogeneous(&(cols[i] + dcol)) - gamma_homogeneous(&(cols[i] - dcol))) * 0.5;
            da += dgamma * (0.25 * z[i]);
        }
        da_dn.set_column(c, &row_major(&da));
    }
    let dn_do1 = (Matrix4::identity() - n * n.transpose()) / r;
    let da_do1 = da_dn * dn_do1;
    for c in 0..4 {
        jac.set_column(c, &da_do1.column(c));
    }

    // d A / d o2_l through softplus and the cumulative sums.
    let dz_dc = [
        Vector4::new(0.0, -1.0, -1.0, -1.0),
        Vector4::new(0.0, 0.0, -1.0, -1.0),
        Vector4::new(0.0, 0.0, 0.0, -1.0),
    ];
    for l in 0..3 {
        let da = equivalent_fisher_matrix(&m, &dz_dc[l]) * sigmoid(o.o2[l]);
        jac.set_column(4 + l, &row_major(&da));
    }
    Ok((a, jac))
}

/// γ written as a homogeneous quadratic form (equal to [`gamma`] on the unit
/// sphere), so that polarization gives exact directional derivatives.
fn gamma_homogeneous(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

fn row_major(m: &Matrix3<f64>) -> SMatrix<f64, 9, 1> {
    SMatrix::<f64, 9, 1>::from_fn(|k, _| m[(k / 3, k % 3)])
}
