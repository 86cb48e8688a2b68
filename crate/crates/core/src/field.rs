//! The primitive cloud: 4D Gaussians and their time-conditioned 3D slices.

use std::ops::Range;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::appearance::{AppearanceCoeffs, AppearanceConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    cov4_backward, cov4_from_matrix, rotor_matrix_backward, rotor_matrix_unchecked, Rotor4,
    Scales4, Sym3, COV_EPS,
};

pub const DEFAULT_TIME_CULL: f64 = 1e-4;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One space-time Gaussian primitive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian4D {
    /// `(x, y, z, t)`; `t` in normalized time.
    pub mean: [f64; 4],
    pub rotor: Rotor4,
    pub scales: Scales4,
    pub opacity_logit: f64,
    pub appearance: AppearanceCoeffs,
}

impl Gaussian4D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        cov4_from_matrix(&rotor_matrix_unchecked(&self.rotor), &self.scales.values())
    }

    pub fn max_spatial_scale(&self) -> f64 {
        self.scales.log_s[..3]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .exp()
    }

    /// Unnormalized joint density `exp(-½ [x-μ; t-μ_t]ᵀ Σ₄⁻¹ [...])`.
    pub fn density(&self, x: &Vector3<f64>, t: f64) -> f64 {
        let cov = self.covariance();
        let inv = cov.try_inverse().expect("covariance is SPD");
        let d = nalgebra::Vector4::new(
            x.x - self.mean[0],
            x.y - self.mean[1],
            x.z - self.mean[2],
            t - self.mean[3],
        );
        (-0.5 * d.dot(&(inv * d))).exp()
    }
}

/// A cloud of Gaussians sharing one appearance configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianCloud {
    pub appearance: AppearanceConfig,
    pub gaussians: Vec<Gaussian4D>,
}

impl GaussianCloud {
    pub fn new(appearance: AppearanceConfig) -> Self {
        Self {
            appearance,
            gaussians: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(&self.appearance)
    }

    pub fn validate(&self) -> Result<()> {
        self.appearance.validate()?;
        for (i, g) in self.gaussians.iter().enumerate() {
            if !g.appearance.matches(&self.appearance) {
                return Err(Error::ShapeMismatch(format!(
                    "gaussian {i} appearance coefficients do not match the cloud configuration"
                )));
            }
        }
        Ok(())
    }
}

/// A Gaussian4D sliced at a fixed time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionedGaussian3D {
    pub mu3: Vector3<f64>,
    pub cov3: Sym3,
    pub temporal_weight: f64,
    pub parent_index: usize,
}

/// Intermediates of [`condition_at_time`] kept for the backward pass.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConditionCache {
    pub r4: Matrix4<f64>,
    pub scales: [f64; 4],
    pub cov4: Matrix4<f64>,
    pub delta: f64,
    /// Diagonal entries of the conditioned covariance that hit the floor.
    pub floored: [bool; 3],
}

pub fn condition_at_time(g: &Gaussian4D, t: f64) -> ConditionedGaussian3D {
    condition_with_cache(g, t, 0).0
}

pub(crate) fn condition_with_cache(
    g: &Gaussian4D,
    t: f64,
    parent_index: usize,
) -> (ConditionedGaussian3D, ConditionCache) {
    let r4 = rotor_matrix_unchecked(&g.rotor);
    let scales = g.scales.values();
    let cov4 = cov4_from_matrix(&r4, &scales);
    let s_tt = cov4[(3, 3)];
    let a = Vector3::new(cov4[(0, 3)], cov4[(1, 3)], cov4[(2, 3)]);
    let delta = t - g.mean[3];
    let mu3 = Vector3::new(g.mean[0], g.mean[1], g.mean[2]) + a * (delta / s_tt);
    let sxx: Matrix3<f64> = cov4.fixed_view::<3, 3>(0, 0).into_owned();
    let mut cov3 = sxx - a * a.transpose() / s_tt;
    cov3 = 0.5 * (cov3 + cov3.transpose());
    let mut floored = [false; 3];
    for i in 0..3 {
        if cov3[(i, i)] < COV_EPS {
            cov3[(i, i)] = COV_EPS;
            floored[i] = true;
        }
    }
    let temporal_weight = (-(delta * delta) / (2.0 * s_tt)).exp();
    (
        ConditionedGaussian3D {
            mu3,
            cov3: Sym3::from_matrix(&cov3),
            temporal_weight,
            parent_index,
        },
        ConditionCache {
            r4,
            scales,
            cov4,
            delta,
            floored,
        },
    )
}

/// Gradients flowing into one Gaussian's geometric parameters.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct GeometryGrad {
    pub mean: [f64; 4],
    pub rotor_left: [f64; 4],
    pub rotor_right: [f64; 4],
    pub log_scales: [f64; 4],
}

/// Backward of [`condition_with_cache`]. `g_cov3` uses the full symmetric
/// convention (`dL = Σ_ij G_ij dC_ij`).
pub(crate) fn condition_backward(
    g: &Gaussian4D,
    cache: &ConditionCache,
    g_mu3: &Vector3<f64>,
    g_cov3: &Matrix3<f64>,
    g_weight: f64,
) -> GeometryGrad {
    let cov4 = &cache.cov4;
    let s = cov4[(3, 3)];
    let a = Vector3::new(cov4[(0, 3)], cov4[(1, 3)], cov4[(2, 3)]);
    let delta = cache.delta;
    let mut g_c = 0.5 * (g_cov3 + g_cov3.transpose());
    for i in 0..3 {
        if cache.floored[i] {
            g_c[(i, i)] = 0.0;
        }
    }

    let mut g_mean = [g_mu3.x, g_mu3.y, g_mu3.z, 0.0];
    let ga_dot = g_mu3.dot(&a);
    let mut g_a = g_mu3 * (delta / s);
    let mut g_s = -ga_dot * delta / (s * s);
    g_mean[3] -= ga_dot / s;

    g_a -= 2.0 * (g_c * a) / s;
    g_s += a.dot(&(g_c * a)) / (s * s);

    let w = (-(delta * delta) / (2.0 * s)).exp();
    g_mean[3] += g_weight * w * delta / s;
    g_s += g_weight * w * delta * delta / (2.0 * s * s);

    let mut g4 = Matrix4::zeros();
    g4.fixed_view_mut::<3, 3>(0, 0).copy_from(&g_c);
    for i in 0..3 {
        g4[(i, 3)] = 0.5 * g_a[i];
        g4[(3, i)] = 0.5 * g_a[i];
    }
    g4[(3, 3)] = g_s;

    let (g_r4, log_scales) = cov4_backward(&cache.r4, &cache.scales, &g4);
    let (rotor_left, rotor_right) = rotor_matrix_backward(&g.rotor, &g_r4);
    GeometryGrad {
        mean: g_mean,
        rotor_left,
        rotor_right,
        log_scales,
    }
}

/// `sigmoid(opacity_logit) · temporal_weight(t)`.
pub fn effective_opacity(g: &Gaussian4D, t: f64) -> f64 {
    g.opacity() * condition_at_time(g, t).temporal_weight
}

/// Indices whose temporal weight at `t` is at least `threshold`.
pub fn cull_by_time(cloud: &GaussianCloud, t: f64, threshold: f64) -> Vec<usize> {
    cloud
        .gaussians
        .iter()
        .enumerate()
        .filter(|(_, g)| temporal_weight(g, t) >= threshold)
        .map(|(i, _)| i)
        .collect()
}

pub fn temporal_weight(g: &Gaussian4D, t: f64) -> f64 {
    let r4 = rotor_matrix_unchecked(&g.rotor);
    let cov4 = cov4_from_matrix(&r4, &g.scales.values());
    let delta = t - g.mean[3];
    (-(delta * delta) / (2.0 * cov4[(3, 3)])).exp()
}

/// Learnable parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Position,
    Rotor,
    Scales,
    Opacity,
    Sh,
    Phases,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Position,
        ParamGroup::Rotor,
        ParamGroup::Scales,
        ParamGroup::Opacity,
        ParamGroup::Sh,
        ParamGroup::Phases,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotor => "rotor",
            ParamGroup::Scales => "scales",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
            ParamGroup::Phases => "phases",
        }
    }
}

impl std::fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Flat per-Gaussian parameter layout:
/// `mean(4) | rotor(8) | log_scales(4) | opacity(1) | sh(3·K) | phases(N_t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    sh_len: usize,
    phase_len: usize,
}

const POSITION: usize = 0;
const ROTOR: usize = 4;
const SCALES: usize = 12;
const OPACITY: usize = 16;
const SH: usize = 17;

impl ParamLayout {
    pub fn new(cfg: &AppearanceConfig) -> Self {
        Self {
            sh_len: 3 * cfg.coeff_count(),
            phase_len: cfg.phase_count(),
        }
    }

    pub fn stride(&self) -> usize {
        SH + self.sh_len + self.phase_len
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        match group {
            ParamGroup::Position => POSITION..ROTOR,
            ParamGroup::Rotor => ROTOR..SCALES,
            ParamGroup::Scales => SCALES..OPACITY,
            ParamGroup::Opacity => OPACITY..SH,
            ParamGroup::Sh => SH..SH + self.sh_len,
            ParamGroup::Phases => SH + self.sh_len..self.stride(),
        }
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        ParamGroup::ALL
            .into_iter()
            .find(|g| self.range(*g).contains(&index))
            .expect("index inside layout")
    }

    pub fn write(&self, g: &Gaussian4D, out: &mut [f64]) {
        out[POSITION..ROTOR].copy_from_slice(&g.mean);
        out[ROTOR..ROTOR + 4].copy_from_slice(&g.rotor.left);
        out[ROTOR + 4..SCALES].copy_from_slice(&g.rotor.right);
        out[SCALES..OPACITY].copy_from_slice(&g.scales.log_s);
        out[OPACITY] = g.opacity_logit;
        for (k, c) in g.appearance.coeffs.iter().enumerate() {
            out[SH + 3 * k..SH + 3 * k + 3].copy_from_slice(c);
        }
        out[self.range(ParamGroup::Phases)].copy_from_slice(&g.appearance.phases);
    }

    pub fn read(&self, src: &[f64], g: &mut Gaussian4D) {
        g.mean.copy_from_slice(&src[POSITION..ROTOR]);
        g.rotor.left.copy_from_slice(&src[ROTOR..ROTOR + 4]);
        g.rotor.right.copy_from_slice(&src[ROTOR + 4..SCALES]);
        g.scales.log_s.copy_from_slice(&src[SCALES..OPACITY]);
        g.opacity_logit = src[OPACITY];
        for (k, c) in g.appearance.coeffs.iter_mut().enumerate() {
            c.copy_from_slice(&src[SH + 3 * k..SH + 3 * k + 3]);
        }
        let phases = self.range(ParamGroup::Phases);
        g.appearance.phases.copy_from_slice(&src[phases]);
    }
}
