//! Independent test-side oracles and random scene generators.

#![allow(dead_code)]

use nalgebra::{Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use sp4d::appearance::AppearanceConfig;
use sp4d::field::{logit, Gaussian4D, GaussianCloud};
use sp4d::geometry::{Rotor4, Scales4};
use sp4d::render::Camera;

pub fn random_quat<R: Rng>(rng: &mut R) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

pub fn random_rotor<R: Rng>(rng: &mut R) -> Rotor4 {
    Rotor4::new(random_quat(rng), random_quat(rng))
}

/// Random Gaussian with spatial scales in `scale_range`, all appearance
/// coefficients small and random.
pub fn random_gaussian<R: Rng>(
    rng: &mut R,
    cfg: &AppearanceConfig,
    center: [f64; 3],
    spread: f64,
    scale_range: (f64, f64),
) -> Gaussian4D {
    let mut appearance = cfg.zeros();
    for c in appearance.coeffs.iter_mut() {
        *c = std::array::from_fn(|_| rng.random_range(-0.3..0.3));
    }
    for p in appearance.phases.iter_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    let s: [f64; 4] = std::array::from_fn(|_| rng.random_range(scale_range.0..scale_range.1));
    Gaussian4D {
        mean: [
            center[0] + rng.random_range(-spread..spread),
            center[1] + rng.random_range(-spread..spread),
            center[2] + rng.random_range(-spread..spread),
            rng.random_range(0.0..1.0),
        ],
        rotor: random_rotor(rng),
        scales: Scales4::from_linear(s),
        opacity_logit: logit(rng.random_range(0.2..0.95)),
        appearance,
    }
}

/// Random cloud in front of a camera at the origin looking down +z.
pub fn random_cloud<R: Rng>(rng: &mut R, n: usize, cfg: AppearanceConfig) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(cfg);
    for _ in 0..n {
        let mut g = random_gaussian(rng, &cfg, [0.0, 0.0, 4.0], 1.2, (0.05, 0.4));
        g.scales.log_s[3] = rng.random_range(0.0_f64..1.0).ln();
        cloud.gaussians.push(g);
    }
    cloud
}

pub fn camera(width: usize, height: usize, t: f64) -> Camera {
    Camera::centered(width, height, 1.2 * width as f64).at_time(t)
}

/// Determinant by cofactor expansion along the first row.
pub fn det_cofactor(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut det = 0.0;
    for col in 0..n {
        let minor: Vec<Vec<f64>> = m[1..]
            .iter()
            .map(|row| row.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, v)| *v).collect())
            .collect();
        let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
        det += sign * m[0][col] * det_cofactor(&minor);
    }
    det
}

/// Ascending eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn rows4(m: &Matrix4<f64>) -> Vec<Vec<f64>> {
    (0..4).map(|i| (0..4).map(|j| m[(i, j)]).collect()).collect()
}

/// Mean and covariance of `x ↦ p(x, t)` measured on a dense grid around the
/// spatial mean, where `p` is the 4D Gaussian with covariance `cov4`.
pub fn grid_moments(mean: [f64; 4], cov4: &Matrix4<f64>, t: f64, half_width: f64, step: f64) -> (Vector3<f64>, [[f64; 3]; 3]) {
    let inv = cov4.try_inverse().expect("invertible covariance");
    let n = (2.0 * half_width / step).ceil() as i64;
    let mut w_sum = 0.0;
    let mut m1 = Vector3::zeros();
    let mut m2 = [[0.0; 3]; 3];
    let dt = t - mean[3];
    for i in 0..=n {
        let x = mean[0] - half_width + i as f64 * step;
        for j in 0..=n {
            let y = mean[1] - half_width + j as f64 * step;
            for k in 0..=n {
                let z = mean[2] - half_width + k as f64 * step;
                let d = Vector4::new(x - mean[0], y - mean[1], z - mean[2], dt);
                let w = (-0.5 * d.dot(&(inv * d))).exp();
                let p = Vector3::new(x, y, z);
                w_sum += w;
                m1 += p * w;
                for a in 0..3 {
                    for b in 0..3 {
                        m2[a][b] += w * p[a] * p[b];
                    }
                }
            }
        }
    }
    let mu = m1 / w_sum;
    let mut cov = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            cov[a][b] = m2[a][b] / w_sum - mu[a] * mu[b];
        }
    }
    (mu, cov)
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Product quadrature on the unit sphere: Gauss–Legendre in cos θ, uniform
/// in φ. Exact for spherical polynomials of degree below `2n`.
pub fn sphere_quadrature(n: usize) -> Vec<(Vector3<f64>, f64)> {
    let gl = gauss_legendre(n);
    let nphi = 2 * n;
    let mut out = Vec::with_capacity(n * nphi);
    for &(ct, w) in &gl {
        let st = (1.0 - ct * ct).sqrt();
        for j in 0..nphi {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / nphi as f64;
            out.push((
                Vector3::new(st * phi.cos(), st * phi.sin(), ct),
                w * 2.0 * std::f64::consts::PI / nphi as f64,
            ));
        }
    }
    out
}

/// 2D covariance of Monte-Carlo samples of a 3D Gaussian pushed through the
/// exact pinhole projection.
pub fn monte_carlo_cov2<R: Rng>(rng: &mut R, mu_cam: Vector3<f64>, cov_cam: nalgebra::Matrix3<f64>, fx: f64, fy: f64, samples: usize) -> [[f64; 2]; 2] {
    let l = cov_cam.cholesky().expect("SPD").l();
    let mut pts = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let p = mu_cam + l * z;
        pts.push([fx * p.x / p.z, fy * p.y / p.z]);
    }
    let n = samples as f64;
    let m = [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n];
    let mut c = [[0.0; 2]; 2];
    for p in &pts {
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += (p[a] - m[a]) * (p[b] - m[b]) / (n - 1.0);
            }
        }
    }
    c
}

/// Direct SSIM of one channel: 11×11 Gaussian window (σ = 1.5), zero
/// padding outside the image, constants for a unit dynamic range.
pub fn reference_ssim_map(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut k = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut out = vec![0.0; w * h];
    for py in 0..h {
        for px in 0..w {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, row) in k.iter().enumerate() {
                for (j, kv) in row.iter().enumerate() {
                    let (qy, qx) = (py as i64 + i as i64 - 5, px as i64 + j as i64 - 5);
                    if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                        continue;
                    }
                    let kv = kv / total;
                    let idx = qy as usize * w + qx as usize;
                    mx += kv * x[idx];
                    my += kv * y[idx];
                    sxx += kv * x[idx] * x[idx];
                    syy += kv * y[idx] * y[idx];
                    sxy += kv * x[idx] * y[idx];
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            out[py * w + px] = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    out
}

/// Mean absolute and maximum per-channel differences between two color images.
pub fn max_color_diff(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).abs()))
        .fold(0.0, f64::max)
}
