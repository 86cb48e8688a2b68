//! Fixed-size linear algebra for 2-, 3- and 4-dimensional Gaussians.
//!
//! 4D rotations are stored as a pair of unit quaternions `(q_left, q_right)`
//! acting on a 4-vector `p` as `q_left * p * q_right`. Space-time coordinates
//! are ordered `(x, y, z, t)` and the time axis is identified with the scalar
//! part of the quaternion algebra, so a pair `(q, conj(q))` is the ordinary 3D
//! rotation of `q` that leaves time untouched.

use nalgebra::{Matrix2, Matrix3, Matrix4, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal regularization added to 4D covariances and used as the floor for
/// conditioned 3D covariance diagonals.
pub const COV_EPS: f64 = 1e-9;

/// Quaternion stored as `(w, x, y, z)`.
pub type Quat = [f64; 4];

/// Quaternion component index for each space-time axis `(x, y, z, t)`.
const AXIS_TO_QUAT: [usize; 4] = [1, 2, 3, 0];

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_conj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

fn quat_norm(q: Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Matrix of `p -> q * p` in `(w, x, y, z)` component order.
fn left_mul_matrix(q: Quat) -> Matrix4<f64> {
    let [a, b, c, d] = q;
    Matrix4::new(
        a, -b, -c, -d, //
        b, a, -d, c, //
        c, d, a, -b, //
        d, -c, b, a,
    )
}

/// Matrix of `p -> p * q` in `(w, x, y, z)` component order.
fn right_mul_matrix(q: Quat) -> Matrix4<f64> {
    let [a, b, c, d] = q;
    Matrix4::new(
        a, -b, -c, -d, //
        b, a, d, -c, //
        c, -d, a, b, //
        d, c, -b, a,
    )
}

fn quat_to_axes(m: &Matrix4<f64>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[(AXIS_TO_QUAT[i], AXIS_TO_QUAT[j])])
}

fn axes_to_quat(m: &Matrix4<f64>) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            out[(AXIS_TO_QUAT[i], AXIS_TO_QUAT[j])] = m[(i, j)];
        }
    }
    out
}

/// An element of SO(4) in isoclinic (left/right quaternion) form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotor4 {
    pub left: Quat,
    pub right: Quat,
}

impl Default for Rotor4 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Rotor4 {
    pub const IDENTITY: Rotor4 = Rotor4 {
        left: [1.0, 0.0, 0.0, 0.0],
        right: [1.0, 0.0, 0.0, 0.0],
    };

    pub fn new(left: Quat, right: Quat) -> Self {
        Self { left, right }
    }

    /// The purely spatial rotation described by the unit quaternion `q`.
    pub fn from_spatial(q: Quat) -> Self {
        let q = quat_normalize(q);
        Self {
            left: q,
            right: quat_conj(q),
        }
    }

    /// Rotation by `angle` radians in the plane spanned by spatial axis
    /// `axis` (0, 1 or 2) and the time axis.
    pub fn space_time(axis: usize, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        let mut q = [c, 0.0, 0.0, 0.0];
        q[axis + 1] = s;
        // (q, q) rotates the (w, axis) plane by twice the quaternion angle.
        Self { left: q, right: q }
    }

    /// `other` applied after `self`.
    pub fn then(self, other: Rotor4) -> Self {
        Self {
            left: quat_mul(other.left, self.left),
            right: quat_mul(self.right, other.right),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.left.iter().chain(self.right.iter()).all(|v| v.is_finite())
    }

    pub fn normalized(&self) -> Self {
        Self {
            left: quat_normalize(self.left),
            right: quat_normalize(self.right),
        }
    }

    /// 4×4 rotation in `(x, y, z, t)` coordinates.
    pub fn matrix(&self) -> Result<Matrix4<f64>> {
        rotor_to_matrix(self)
    }
}

pub fn rotor_to_matrix(r: &Rotor4) -> Result<Matrix4<f64>> {
    if !r.is_finite() || quat_norm(r.left) == 0.0 || quat_norm(r.right) == 0.0 {
        return Err(Error::InvalidRotor);
    }
    Ok(rotor_matrix_unchecked(r))
}

/// Same as [`rotor_to_matrix`] for callers that already know the rotor is valid.
pub(crate) fn rotor_matrix_unchecked(r: &Rotor4) -> Matrix4<f64> {
    let l = left_mul_matrix(quat_normalize(r.left));
    let rr = right_mul_matrix(quat_normalize(r.right));
    quat_to_axes(&(l * rr))
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion components.
pub(crate) fn rotor_matrix_backward(r: &Rotor4, g_matrix: &Matrix4<f64>) -> (Quat, Quat) {
    let ql = quat_normalize(r.left);
    let qr = quat_normalize(r.right);
    let g = axes_to_quat(g_matrix);
    let g_l = g * right_mul_matrix(qr).transpose();
    let g_r = left_mul_matrix(ql).transpose() * g;
    let mut gl = [0.0; 4];
    let mut gr = [0.0; 4];
    for k in 0..4 {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        gl[k] = g_l.component_mul(&left_mul_matrix(e)).sum();
        gr[k] = g_r.component_mul(&right_mul_matrix(e)).sum();
    }
    (
        normalize_backward(r.left, gl),
        normalize_backward(r.right, gr),
    )
}

fn normalize_backward(raw: Quat, g_unit: Quat) -> Quat {
    let n = quat_norm(raw);
    let u = [raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n];
    let dot: f64 = (0..4).map(|i| u[i] * g_unit[i]).sum();
    [
        (g_unit[0] - u[0] * dot) / n,
        (g_unit[1] - u[1] * dot) / n,
        (g_unit[2] - u[2] * dot) / n,
        (g_unit[3] - u[3] * dot) / n,
    ]
}

/// Log-parametrized axis scales `(s_x, s_y, s_z, s_t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales4 {
    pub log_s: [f64; 4],
}

impl Scales4 {
    pub fn from_log(log_s: [f64; 4]) -> Self {
        Self { log_s }
    }

    pub fn from_linear(s: [f64; 4]) -> Self {
        Self {
            log_s: s.map(f64::ln),
        }
    }

    pub fn values(&self) -> [f64; 4] {
        self.log_s.map(f64::exp)
    }
}

/// Packed symmetric 2×2 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        Self {
            xx: m[(0, 0)],
            xy: 0.5 * (m[(0, 1)] + m[(1, 0)]),
            yy: m[(1, 1)],
        }
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.xx, self.xy, self.xy, self.yy)
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if det <= 0.0 || !det.is_finite() {
            return None;
        }
        Some(Sym2::new(self.yy / det, -self.xy / det, self.xx / det))
    }

    /// Largest eigenvalue.
    pub fn max_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        mid + (half_diff * half_diff + self.xy * self.xy).sqrt()
    }
}

/// Packed symmetric 3×3 matrix, upper triangle row-major: `xx xy xz yy yz zz`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym3(pub [f64; 6]);

impl Sym3 {
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let s = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        Self([m[(0, 0)], s(0, 1), s(0, 2), m[(1, 1)], s(1, 2), m[(2, 2)]])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, xy, xz, yy, yz, zz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    pub fn identity() -> Self {
        Self([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    pub fn diagonal(d: [f64; 3]) -> Self {
        Self([d[0], 0.0, 0.0, d[1], 0.0, d[2]])
    }
}

/// Packed symmetric 4×4 matrix, upper triangle row-major.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym4(pub [f64; 10]);

impl Sym4 {
    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        let mut out = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                out[k] = if i == j {
                    m[(i, i)]
                } else {
                    0.5 * (m[(i, j)] + m[(j, i)])
                };
                k += 1;
            }
        }
        Self(out)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                m[(i, j)] = self.0[k];
                m[(j, i)] = self.0[k];
                k += 1;
            }
        }
        m
    }
}

/// `Σ₄ = R₄ diag(s²) R₄ᵀ`, symmetrized, with each diagonal entry floored
/// at [`COV_EPS`].
pub fn build_cov4(r: &Rotor4, s: &Scales4) -> Sym4 {
    Sym4::from_matrix(&cov4_from_matrix(&rotor_matrix_unchecked(r), &s.values()))
}

pub(crate) fn cov4_from_matrix(r4: &Matrix4<f64>, scales: &[f64; 4]) -> Matrix4<f64> {
    let d = Matrix4::from_diagonal(&nalgebra::Vector4::from_fn(|i, _| scales[i] * scales[i]));
    let m = r4 * d * r4.transpose();
    let mut sym = 0.5 * (m + m.transpose());
    for i in 0..4 {
        sym[(i, i)] = sym[(i, i)].max(COV_EPS);
    }
    sym
}

/// Gradient of `Σ₄` (full symmetric convention) pulled back to the rotation
/// matrix and to the log-scales.
pub(crate) fn cov4_backward(
    r4: &Matrix4<f64>,
    scales: &[f64; 4],
    g_cov: &Matrix4<f64>,
) -> (Matrix4<f64>, [f64; 4]) {
    let mut g = 0.5 * (g_cov + g_cov.transpose());
    let d = Matrix4::from_diagonal(&nalgebra::Vector4::from_fn(|i, _| scales[i] * scales[i]));
    let raw = r4 * d * r4.transpose();
    for i in 0..4 {
        if raw[(i, i)] < COV_EPS {
            g[(i, i)] = 0.0;
        }
    }
    let g_r = 2.0 * g * r4 * d;
    let rgr = r4.transpose() * g * r4;
    let g_log = std::array::from_fn(|i| rgr[(i, i)] * 2.0 * scales[i] * scales[i]);
    (g_r, g_log)
}

/// Eigen decomposition of a symmetric 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymEigen3 {
    /// Ascending.
    pub values: [f64; 3],
    /// Columns are unit eigenvectors matching `values`.
    pub vectors: Matrix3<f64>,
}

impl SymEigen3 {
    pub fn vector(&self, k: usize) -> Vector3<f64> {
        self.vectors.column(k).into_owned()
    }

    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.vectors * Matrix3::from_diagonal(&Vector3::from(self.values)) * self.vectors.transpose()
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors. Each eigenvector is
/// sign-normalized so its first non-negligible component is positive.
pub fn eig_sym3(m: &Sym3) -> SymEigen3 {
    let eig = SymmetricEigen::new(m.to_matrix());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let mut vectors = Matrix3::zeros();
    let mut values = [0.0; 3];
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        let mut v: Vector3<f64> = eig.eigenvectors.column(src).into_owned();
        v /= v.norm();
        if let Some(first) = v.iter().copied().find(|c| c.abs() > 1e-12) {
            if first < 0.0 {
                v = -v;
            }
        }
        vectors.set_column(k, &v);
    }
    SymEigen3 { values, vectors }
}
