//! Time-evolving, view-dependent color.
//!
//! Each Gaussian carries coefficients `k[n][l][m][c]` over the separable basis
//! `Z_nl^m(t, dir) = Y_l^m(dir) * τ_n(t)` with `τ_0 = 1` and
//! `τ_n(t) = sin(2π n t / T + φ_n)` for `n ≥ 1`. Color is
//! `max(0, 0.5 + Σ k Z)` per channel.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;
/// Number of real SH functions up to [`MAX_SH_DEGREE`].
pub const MAX_SH_COUNT: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2_XY: f64 = 1.092_548_430_592_079_2;
const C2_0: f64 = 0.315_391_565_252_520_05;
const C2_2: f64 = 0.546_274_215_296_039_6;
const C3_3: f64 = 0.590_043_589_926_643_5;
const C3_2A: f64 = 2.890_611_442_640_554;
const C3_1: f64 = 0.457_045_799_464_465_8;
const C3_0: f64 = 0.373_176_332_590_115_4;
const C3_2B: f64 = 1.445_305_721_320_277;

/// Value of `Y_0^0`.
pub const SH_C0: f64 = C0;

/// Truncation orders and temporal period shared by every Gaussian of a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceConfig {
    /// Maximum SH degree `L`.
    pub sh_degree: usize,
    /// Number of temporal harmonics `N_t` beyond the constant term.
    pub temporal_order: usize,
    /// Temporal period `T` in normalized time.
    pub period: f64,
}

impl Default for AppearanceConfig {
    fn default() -> Self {
        Self {
            sh_degree: 3,
            temporal_order: 2,
            period: 1.0,
        }
    }
}

impl AppearanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(Error::ShDegree(self.sh_degree));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "appearance period must be positive, got {}",
                self.period
            )));
        }
        Ok(())
    }

    pub fn sh_count(&self) -> usize {
        (self.sh_degree + 1) * (self.sh_degree + 1)
    }

    /// `(N_t + 1) (L + 1)²`.
    pub fn coeff_count(&self) -> usize {
        (self.temporal_order + 1) * self.sh_count()
    }

    pub fn phase_count(&self) -> usize {
        self.temporal_order
    }

    pub fn zeros(&self) -> AppearanceCoeffs {
        AppearanceCoeffs {
            coeffs: vec![[0.0; 3]; self.coeff_count()],
            phases: vec![0.0; self.phase_count()],
        }
    }

    /// Coefficients whose only nonzero entry is the static DC term chosen so
    /// the activated color equals `rgb`.
    pub fn constant_color(&self, rgb: [f64; 3]) -> AppearanceCoeffs {
        let mut c = self.zeros();
        c.coeffs[0] = rgb.map(|v| (v - 0.5) / C0);
        c
    }
}

/// Per-Gaussian spherindrical coefficients, laid out as
/// `coeffs[n * (L+1)² + l² + l + m]`, plus one learnable phase per `n ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceCoeffs {
    pub coeffs: Vec<[f64; 3]>,
    pub phases: Vec<f64>,
}

impl AppearanceCoeffs {
    pub fn matches(&self, cfg: &AppearanceConfig) -> bool {
        self.coeffs.len() == cfg.coeff_count() && self.phases.len() == cfg.phase_count()
    }
}

pub fn sh_index(l: usize, m: i32) -> usize {
    ((l * l + l) as i64 + m as i64) as usize
}

fn check_lm(l: usize, m: i32) -> Result<()> {
    if l > MAX_SH_DEGREE {
        return Err(Error::ShDegree(l));
    }
    if m.unsigned_abs() as usize > l {
        return Err(Error::ShOrder { l, m });
    }
    Ok(())
}

/// Real spherical harmonics up to `degree` at unit direction `d`.
pub(crate) fn sh_basis(degree: usize, d: &Vector3<f64>) -> [f64; MAX_SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = [0.0; MAX_SH_COUNT];
    b[0] = C0;
    if degree >= 1 {
        b[1] = C1 * y;
        b[2] = C1 * z;
        b[3] = C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2_XY * x * y;
        b[5] = C2_XY * y * z;
        b[6] = C2_0 * (2.0 * zz - xx - yy);
        b[7] = C2_XY * x * z;
        b[8] = C2_2 * (xx - yy);
        if degree >= 3 {
            b[9] = C3_3 * y * (3.0 * xx - yy);
            b[10] = C3_2A * x * y * z;
            b[11] = C3_1 * y * (4.0 * zz - xx - yy);
            b[12] = C3_0 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = C3_1 * x * (4.0 * zz - xx - yy);
            b[14] = C3_2B * z * (xx - yy);
            b[15] = C3_3 * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Gradients of the polynomial forms of [`sh_basis`] with respect to `(x, y, z)`.
pub(crate) fn sh_basis_grad(degree: usize, d: &Vector3<f64>) -> [[f64; 3]; MAX_SH_COUNT] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut g = [[0.0; 3]; MAX_SH_COUNT];
    if degree >= 1 {
        g[1] = [0.0, C1, 0.0];
        g[2] = [0.0, 0.0, C1];
        g[3] = [C1, 0.0, 0.0];
    }
    if degree >= 2 {
        g[4] = [C2_XY * y, C2_XY * x, 0.0];
        g[5] = [0.0, C2_XY * z, C2_XY * y];
        g[6] = [-2.0 * C2_0 * x, -2.0 * C2_0 * y, 4.0 * C2_0 * z];
        g[7] = [C2_XY * z, 0.0, C2_XY * x];
        g[8] = [2.0 * C2_2 * x, -2.0 * C2_2 * y, 0.0];
        if degree >= 3 {
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = [6.0 * C3_3 * x * y, 3.0 * C3_3 * (xx - yy), 0.0];
            g[10] = [C3_2A * y * z, C3_2A * x * z, C3_2A * x * y];
            g[11] = [
                -2.0 * C3_1 * x * y,
                C3_1 * (4.0 * zz - xx - 3.0 * yy),
                8.0 * C3_1 * y * z,
            ];
            g[12] = [
                -6.0 * C3_0 * x * z,
                -6.0 * C3_0 * y * z,
                C3_0 * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                C3_1 * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * C3_1 * x * y,
                8.0 * C3_1 * x * z,
            ];
            g[14] = [2.0 * C3_2B * x * z, -2.0 * C3_2B * y * z, C3_2B * (xx - yy)];
            g[15] = [3.0 * C3_3 * (xx - yy), -6.0 * C3_3 * x * y, 0.0];
        }
    }
    g
}

/// Real spherical harmonic `Y_l^m` at a unit direction.
pub fn eval_sh(l: usize, m: i32, dir: &Vector3<f64>) -> Result<f64> {
    check_lm(l, m)?;
    Ok(sh_basis(l, dir)[sh_index(l, m)])
}

/// Temporal factor `τ_n(t)`; `phases` holds `φ_1..φ_N`.
pub fn temporal_factor(n: usize, t: f64, period: f64, phases: &[f64]) -> f64 {
    if n == 0 {
        1.0
    } else {
        (2.0 * PI * n as f64 * t / period + phases[n - 1]).sin()
    }
}

/// Basis function `Z_nl^m(t, dir)`.
pub fn eval_basis(
    cfg: &AppearanceConfig,
    phases: &[f64],
    n: usize,
    l: usize,
    m: i32,
    t: f64,
    dir: &Vector3<f64>,
) -> Result<f64> {
    check_lm(l, m)?;
    if n > cfg.temporal_order {
        return Err(Error::TemporalIndex {
            n,
            order: cfg.temporal_order,
        });
    }
    Ok(eval_sh(l, m, dir)? * temporal_factor(n, t, cfg.period, phases))
}

fn sh_sum(coeffs: &[[f64; 3]], basis: &[f64; MAX_SH_COUNT], count: usize) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (k, c) in coeffs[..count].iter().enumerate() {
        for ch in 0..3 {
            acc[ch] += c[ch] * basis[k];
        }
    }
    acc
}

fn activate(pre: [f64; 3]) -> [f64; 3] {
    pre.map(|v| (0.5 + v).max(0.0))
}

/// Static view-dependent color from one block of SH coefficients.
pub fn eval_static_color(sh: &[[f64; 3]], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    let count = (degree + 1) * (degree + 1);
    activate(sh_sum(sh, &sh_basis(degree, dir), count))
}

/// Time- and view-dependent color at unit direction `dir`.
pub fn eval_color(
    cfg: &AppearanceConfig,
    coeffs: &AppearanceCoeffs,
    t: f64,
    dir: &Vector3<f64>,
) -> [f64; 3] {
    eval_color_degree(cfg, coeffs, t, dir, cfg.sh_degree)
}

/// [`eval_color`] restricted to SH bands `0..=degree`.
pub fn eval_color_degree(
    cfg: &AppearanceConfig,
    coeffs: &AppearanceCoeffs,
    t: f64,
    dir: &Vector3<f64>,
    degree: usize,
) -> [f64; 3] {
    activate(color_preactivation(cfg, coeffs, t, dir, degree))
}

fn color_preactivation(
    cfg: &AppearanceConfig,
    coeffs: &AppearanceCoeffs,
    t: f64,
    dir: &Vector3<f64>,
    degree: usize,
) -> [f64; 3] {
    let degree = degree.min(cfg.sh_degree);
    let basis = sh_basis(degree, dir);
    let count = (degree + 1) * (degree + 1);
    let stride = cfg.sh_count();
    let mut acc = [0.0; 3];
    for n in 0..=cfg.temporal_order {
        let tau = temporal_factor(n, t, cfg.period, &coeffs.phases);
        let inner = sh_sum(&coeffs.coeffs[n * stride..], &basis, count);
        for ch in 0..3 {
            acc[ch] += tau * inner[ch];
        }
    }
    acc
}

/// Color together with its Jacobians: `d_dir[c]` is the gradient of channel
/// `c` with respect to an unnormalized direction vector evaluated at `dir`,
/// and `d_t[c]` its time derivative. Clamped channels have zero derivatives.
pub struct ColorJacobian {
    pub rgb: [f64; 3],
    pub d_dir: Matrix3<f64>,
    pub d_t: [f64; 3],
}

pub fn eval_color_with_grad(
    cfg: &AppearanceConfig,
    coeffs: &AppearanceCoeffs,
    t: f64,
    dir: &Vector3<f64>,
) -> ColorJacobian {
    let unit = dir.normalize();
    let pre = color_preactivation(cfg, coeffs, t, &unit, cfg.sh_degree);
    let mut d_dir = Matrix3::zeros();
    let mut d_t = [0.0; 3];
    for ch in 0..3 {
        if 0.5 + pre[ch] <= 0.0 {
            continue;
        }
        let mut g_rgb = [0.0; 3];
        g_rgb[ch] = 1.0;
        let mut scratch_c = vec![[0.0; 3]; cfg.coeff_count()];
        let mut scratch_p = vec![0.0; cfg.phase_count()];
        let g = color_backward(
            cfg,
            coeffs,
            t,
            dir,
            cfg.sh_degree,
            g_rgb,
            &mut scratch_c,
            &mut scratch_p,
        );
        d_dir.set_row(ch, &g.transpose());
        let basis = sh_basis(cfg.sh_degree, &unit);
        let stride = cfg.sh_count();
        for n in 1..=cfg.temporal_order {
            let omega = 2.0 * PI * n as f64 / cfg.period;
            let dtau = omega * (omega * t + coeffs.phases[n - 1]).cos();
            let inner = sh_sum(&coeffs.coeffs[n * stride..], &basis, stride);
            d_t[ch] += dtau * inner[ch];
        }
    }
    ColorJacobian {
        rgb: activate(pre),
        d_dir,
        d_t,
    }
}

/// Accumulates gradients of the activated color into `g_coeffs`/`g_phases`
/// and returns the gradient with respect to the unnormalized `dir_raw`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn color_backward(
    cfg: &AppearanceConfig,
    coeffs: &AppearanceCoeffs,
    t: f64,
    dir_raw: &Vector3<f64>,
    degree: usize,
    g_rgb: [f64; 3],
    g_coeffs: &mut [[f64; 3]],
    g_phases: &mut [f64],
) -> Vector3<f64> {
    let degree = degree.min(cfg.sh_degree);
    let len = dir_raw.norm();
    let unit = dir_raw / len;
    let pre = color_preactivation(cfg, coeffs, t, &unit, degree);
    let g_pre: [f64; 3] = std::array::from_fn(|c| if 0.5 + pre[c] > 0.0 { g_rgb[c] } else { 0.0 });
    if g_pre.iter().all(|&v| v == 0.0) {
        return Vector3::zeros();
    }
    let basis = sh_basis(degree, &unit);
    let basis_grad = sh_basis_grad(degree, &unit);
    let count = (degree + 1) * (degree + 1);
    let stride = cfg.sh_count();
    let mut g_unit = Vector3::zeros();
    for n in 0..=cfg.temporal_order {
        let tau = temporal_factor(n, t, cfg.period, &coeffs.phases);
        let block = &coeffs.coeffs[n * stride..n * stride + count];
        let mut g_tau = 0.0;
        for k in 0..count {
            let mut s = 0.0;
            for c in 0..3 {
                g_coeffs[n * stride + k][c] += g_pre[c] * basis[k] * tau;
                s += g_pre[c] * block[k][c];
            }
            g_tau += s * basis[k];
            let gb = s * tau;
            g_unit += gb * Vector3::from(basis_grad[k]);
        }
        if n >= 1 {
            let arg = 2.0 * PI * n as f64 * t / cfg.period + coeffs.phases[n - 1];
            g_phases[n - 1] += g_tau * arg.cos();
        }
    }
    (g_unit - unit * unit.dot(&g_unit)) / len
}
