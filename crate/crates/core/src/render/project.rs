//! EWA projection of conditioned Gaussians and their geometric normals.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::camera::Camera;
use crate::field::ConditionedGaussian3D;
use crate::geometry::{eig_sym3, Sym2, SymEigen3};

/// Low-pass dilation added to the screen covariance diagonal (pixels²).
pub const KAPPA: f64 = 0.3;
/// Weight below which a splat is considered not to touch a pixel; sets the
/// conservative screen footprint used for culling.
pub const FOOTPRINT_CUTOFF: f64 = 1e-9;

const TIE_TOL: f64 = 1e-9;
/// Gap regularization for eigenvector derivatives, relative to `λ_max`.
const GAP_REG: f64 = 1e-4;

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Splat2D {
    pub mean2: [f64; 2],
    pub cov2: Sym2,
    pub inv_cov2: Sym2,
    /// Camera-space z.
    pub depth: f64,
    pub color: [f64; 3],
    pub normal_cam: [f64; 3],
    pub eff_opacity: f64,
    pub parent_index: usize,
    /// Radius (pixels) beyond which the splat weight is below [`FOOTPRINT_CUTOFF`].
    pub radius: f64,
    /// Mahalanobis distance squared beyond which the weight is below
    /// [`FOOTPRINT_CUTOFF`]; such evaluations are skipped.
    pub q_cutoff: f64,
}

pub(crate) struct ProjectionCache {
    pub p: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub cov3: Matrix3<f64>,
}

pub(crate) fn perspective_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// Screen covariance `J W Σ₃ Wᵀ Jᵀ + κI` and its projection cache, or `None`
/// when the mean is outside the clip range.
pub(crate) fn project_covariance(
    cg: &ConditionedGaussian3D,
    cam: &Camera,
) -> Option<(Sym2, ProjectionCache)> {
    let p = cam.to_camera(&cg.mu3);
    if !(p.z > cam.near && p.z < cam.far) {
        return None;
    }
    let jac = perspective_jacobian(cam, &p);
    let t = jac * cam.rotation;
    let cov3 = cg.cov3.to_matrix();
    let mut cov2: Matrix2<f64> = t * cov3 * t.transpose();
    cov2[(0, 0)] += KAPPA;
    cov2[(1, 1)] += KAPPA;
    Some((Sym2::from_matrix(&cov2), ProjectionCache { p, jac, cov3 }))
}

pub(crate) fn q_cutoff(eff_opacity: f64) -> f64 {
    2.0 * (eff_opacity / FOOTPRINT_CUTOFF).ln()
}

pub(crate) fn footprint_radius(cov2: &Sym2, eff_opacity: f64) -> Option<f64> {
    if !(eff_opacity > FOOTPRINT_CUTOFF) {
        return None;
    }
    Some((2.0 * cov2.max_eigenvalue() * (eff_opacity / FOOTPRINT_CUTOFF).ln()).sqrt())
}

/// Projects a conditioned Gaussian to the image plane. Returns `None` when
/// the camera-space depth is outside `(near, far)` or the footprint misses
/// the image.
pub fn project(
    cg: &ConditionedGaussian3D,
    eff_opacity: f64,
    color: [f64; 3],
    normal: Vector3<f64>,
    cam: &Camera,
) -> Option<Splat2D> {
    let (cov2, cache) = project_covariance(cg, cam)?;
    let inv_cov2 = cov2.inverse()?;
    let radius = footprint_radius(&cov2, eff_opacity)?;
    let mean2 = cam.project_point(&cache.p);
    if mean2[0] + radius < 0.0
        || mean2[1] + radius < 0.0
        || mean2[0] - radius > cam.width as f64
        || mean2[1] - radius > cam.height as f64
    {
        return None;
    }
    Some(Splat2D {
        mean2,
        cov2,
        inv_cov2,
        depth: cache.p.z,
        color,
        normal_cam: [normal.x, normal.y, normal.z],
        eff_opacity,
        parent_index: cg.parent_index,
        radius,
        q_cutoff: q_cutoff(eff_opacity),
    })
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum NormalMode {
    /// Smallest-eigenvalue axis, sign-flipped by `sign` to face the camera.
    Eigen { sign: f64 },
    /// Degenerate smallest eigenspace; resolved from the view ray.
    Tie,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormalCache {
    pub eigen: SymEigen3,
    pub mode: NormalMode,
}

/// Camera-frame normal of a conditioned Gaussian: the axis of its smallest
/// covariance eigenvalue, oriented toward the camera. Isotropic covariances
/// return the negated view ray; a degenerate smallest eigenspace returns the
/// direction in that plane closest to the negated view ray.
pub fn gaussian_normal(cg: &ConditionedGaussian3D, cam: &Camera) -> Vector3<f64> {
    normal_with_cache(cg, cam).0
}

pub(crate) fn normal_with_cache(
    cg: &ConditionedGaussian3D,
    cam: &Camera,
) -> (Vector3<f64>, NormalCache) {
    let eigen = eig_sym3(&cg.cov3);
    let [l0, l1, l2] = eigen.values;
    let p = cam.to_camera(&cg.mu3);
    let ray = p.normalize();
    let scale = l2.abs().max(f64::MIN_POSITIVE);
    if l2 - l0 <= TIE_TOL * scale {
        return (-ray, NormalCache { eigen, mode: NormalMode::Tie });
    }
    if l1 - l0 <= TIE_TOL * scale {
        let axis = cam.rotation * eigen.vector(2);
        let in_plane = -ray + axis * ray.dot(&axis);
        if in_plane.norm() > 1e-12 {
            return (
                in_plane.normalize(),
                NormalCache { eigen, mode: NormalMode::Tie },
            );
        }
    }
    let n = cam.rotation * eigen.vector(0);
    let sign = if n.dot(&p) > 0.0 { -1.0 } else { 1.0 };
    (n * sign, NormalCache { eigen, mode: NormalMode::Eigen { sign } })
}

/// Gradient of the camera-frame normal pulled back to the world-space
/// conditioned covariance (full symmetric convention).
pub(crate) fn normal_backward(cache: &NormalCache, cam: &Camera, g_n: &Vector3<f64>) -> Matrix3<f64> {
    let NormalMode::Eigen { sign } = cache.mode else {
        return Matrix3::zeros();
    };
    let g_v = cam.rotation.transpose() * g_n * sign;
    let v0 = cache.eigen.vector(0);
    let eta = GAP_REG * cache.eigen.values[2].abs();
    let mut g = Matrix3::zeros();
    for j in 1..3 {
        let vj = cache.eigen.vector(j);
        let gap = cache.eigen.values[0] - cache.eigen.values[j];
        let c = vj.dot(&g_v) * gap / (gap * gap + eta * eta);
        g += c * 0.5 * (vj * v0.transpose() + v0 * vj.transpose());
    }
    g
}

/// Gradients of one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct SplatGrad {
    pub mean2: [f64; 2],
    /// With respect to the packed inverse covariance `(xx, xy, yy)` where the
    /// off-diagonal parameter enters the quadratic form twice.
    pub conic: [f64; 3],
    pub eff_opacity: f64,
    pub color: [f64; 3],
    pub depth: f64,
    pub normal: [f64; 3],
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean2[k] += o.mean2[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
            self.normal[k] += o.normal[k];
        }
        self.eff_opacity += o.eff_opacity;
        self.depth += o.depth;
    }
}

/// Pulls screen-space gradients back to the camera-space mean (`g_p`) and
/// world-space conditioned covariance (`g_cov3`).
pub(crate) fn projection_backward(
    splat: &Splat2D,
    cache: &ProjectionCache,
    cam: &Camera,
    g: &SplatGrad,
) -> (Vector3<f64>, Matrix3<f64>) {
    let q = splat.inv_cov2.to_matrix();
    let g_q = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -(q * g_q * q);

    let t = cache.jac * cam.rotation;
    let g_cov3 = t.transpose() * g_cov2 * t;
    let g_t = 2.0 * g_cov2 * t * cache.cov3;
    let g_j = g_t * cam.rotation.transpose();

    let p = &cache.p;
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut g_p = Vector3::zeros();
    g_p.x += g_j[(0, 2)] * (-fx * iz2);
    g_p.y += g_j[(1, 2)] * (-fy * iz2);
    g_p.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * p.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * p.y * iz3);

    let [gu, gv] = g.mean2;
    g_p.x += gu * fx * iz;
    g_p.z -= gu * fx * p.x * iz2;
    g_p.y += gv * fy * iz;
    g_p.z -= gv * fy * p.y * iz2;
    g_p.z += g.depth;
    (g_p, g_cov3)
}
