//! Rotation-group primitives: quaternion/matrix conversion, proper SVD,
//! geodesic distance and Haar-uniform sampling.
//!
//! Quaternions are stored scalar-first, `(w, x, y, z)`.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Tolerance used by [`Rotation::new`] for orthonormality and determinant.
pub const ROTATION_TOL: f64 = 1e-9;

/// A 3x3 orthonormal matrix with determinant +1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates `m` against [`ROTATION_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let orth_err = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if !(orth_err <= ROTATION_TOL) || !((det - 1.0).abs() <= ROTATION_TOL) {
            return Err(Error::NotARotation { orth_err, det });
        }
        Ok(Rotation(m))
    }

    /// Wraps a matrix that is a rotation by construction (products of
    /// rotations, outputs of [`gamma`]). No check is performed.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation by `angle` radians about the unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
        Rotation(Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }
}

/// Unit quaternion in the canonical hemisphere: `w >= 0`, and when `w` is
/// (numerically) zero the first nonzero of `(x, y, z)` is positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitQuaternion(Vector4<f64>);

impl UnitQuaternion {
    /// Normalizes `q` (if within 1e-6 of unit length) and canonicalizes its sign.
    pub fn new(q: Vector4<f64>) -> Result<Self> {
        Ok(UnitQuaternion(canonical_hemisphere(normalize_quat(&q)?)))
    }

    pub fn identity() -> Self {
        UnitQuaternion(Vector4::new(1.0, 0.0, 0.0, 0.0))
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.0
    }

    pub fn to_rotation(&self) -> Rotation {
        Rotation(gamma(&self.0))
    }
}

fn normalize_quat(q: &Vector4<f64>) -> Result<Vector4<f64>> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::NonUnitQuaternion { norm });
    }
    Ok(q / norm)
}

/// Flips `q` into the canonical hemisphere.
pub fn canonical_hemisphere(q: Vector4<f64>) -> Vector4<f64> {
    let sign = if q[0].abs() >= 1e-9 {
        q[0].signum()
    } else {
        q.iter()
            .skip(1)
            .find(|c| **c != 0.0)
            .map_or(1.0, |c| c.signum())
    };
    q * sign
}

/// The quaternion-to-matrix map `γ` for a unit 4-vector of either sign.
/// Every entry is a sum of pairwise products, so `gamma(q) == gamma(-q)`
/// bit for bit.
pub fn gamma(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * y * y - 2.0 * z * z,
        2.0 * x * y - 2.0 * w * z,
        2.0 * x * z + 2.0 * w * y,
        2.0 * x * y + 2.0 * w * z,
        1.0 - 2.0 * x * x - 2.0 * z * z,
        2.0 * y * z - 2.0 * w * x,
        2.0 * x * z - 2.0 * w * y,
        2.0 * y * z + 2.0 * w * x,
        1.0 - 2.0 * x * x - 2.0 * y * y,
    )
}

/// Inverse of [`gamma`] for a (near-)rotation matrix, using the largest of
/// the four diagonal combinations as pivot. Output is canonicalized.
pub fn gamma_inv(r: &Matrix3<f64>) -> Vector4<f64> {
    let (m00, m11, m22) = (r[(0, 0)], r[(1, 1)], r[(2, 2)]);
    let trace = m00 + m11 + m22;
    let q = if trace >= m00 && trace >= m11 && trace >= m22 {
        let s = 2.0 * (1.0 + trace).sqrt();
        Vector4::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if m00 >= m11 && m00 >= m22 {
        let s = 2.0 * (1.0 + m00 - m11 - m22).sqrt();
        Vector4::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if m11 >= m22 {
        let s = 2.0 * (1.0 + m11 - m00 - m22).sqrt();
        Vector4::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = 2.0 * (1.0 + m22 - m00 - m11).sqrt();
        Vector4::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    canonical_hemisphere(q.normalize())
}

/// `γ(q)` for a raw 4-vector. Inputs within 1e-6 of unit norm are
/// renormalized; anything further off is rejected.
pub fn quat_to_rot(q: &Vector4<f64>) -> Result<Rotation> {
    Ok(Rotation(gamma(&normalize_quat(q)?)))
}

/// `γ⁻¹(r)` in the canonical hemisphere.
pub fn rot_to_quat(r: &Rotation) -> UnitQuaternion {
    UnitQuaternion(gamma_inv(&r.0))
}

/// The four basis rotations `E_1..E_4`: π-rotations about x, y, z, then the
/// identity. `E_i = γ(e_{i+1})` for i = 1..3 and `E_4 = γ(e_1)` with `e_k` the
/// columns of `I_4` in `(w, x, y, z)` order.
pub fn quat_basis() -> [Matrix3<f64>; 4] {
    [
        Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
        Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0)),
        Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)),
        Matrix3::identity(),
    ]
}

/// Diagonals of [`quat_basis`], handy for moment bookkeeping.
pub const QUAT_BASIS_DIAG: [[f64; 3]; 4] = [
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
    [-1.0, -1.0, 1.0],
    [1.0, 1.0, 1.0],
];

/// Proper singular value decomposition `A = U diag(S) Vᵀ` with `U, V` in
/// SO(3) and `s1 >= s2 >= |s3|`; the sign defect lives in `s3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProperSvd {
    pub u: Rotation,
    pub s: Vector3<f64>,
    pub v: Rotation,
}

impl ProperSvd {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u.0 * Matrix3::from_diagonal(&self.s) * self.v.0.transpose()
    }
}

pub fn proper_svd(a: &Matrix3<f64>) -> ProperSvd {
    let svd = a.svd(true, true);
    let u_raw = svd.u.expect("svd requested u");
    let vt_raw = svd.v_t.expect("svd requested v_t");
    let v_raw = vt_raw.transpose();

    // Sort singular triplets in descending order.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut u1 = Matrix3::zeros();
    let mut v1 = Matrix3::zeros();
    let mut s = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u1.set_column(dst, &u_raw.column(src));
        v1.set_column(dst, &v_raw.column(src));
        s[dst] = svd.singular_values[src];
    }

    let det_u = u1.determinant().signum();
    let det_v = v1.determinant().signum();
    let mut u = u1;
    let mut v = v1;
    if det_u < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if det_v < 0.0 {
        v.column_mut(2).neg_mut();
    }
    s[2] *= det_u * det_v;

    ProperSvd {
        u: Rotation(u),
        s,
        v: Rotation(v),
    }
}

/// Geodesic distance in degrees, `arccos((tr(r1ᵀ r2) - 1) / 2)`.
pub fn geodesic_angle(r1: &Rotation, r2: &Rotation) -> f64 {
    let c = ((r1.0.transpose() * r2.0).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Uniform unit 4-vector: four standard normals, normalized.
pub fn sample_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Vector4<f64> {
    loop {
        let v = Vector4::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n >= 1e-12 {
            return v / n;
        }
    }
}

/// Haar-uniform rotation, `γ` of a uniform unit quaternion.
pub fn sample_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    Rotation(gamma(&sample_unit_quaternion(rng)))
}
