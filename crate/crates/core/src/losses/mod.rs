//! Training objectives and their analytic gradients.
//!
//! The total loss for one frame is
//! `(1-λ_ssim) L1 + λ_ssim (1 - SSIM) + λ_depth L1_depth + λ_enac ENAC`,
//! where ENAC is the mean L1 distance between normals derived from the
//! rendered depth map and normals composited from Gaussian geometry.

pub mod gradcheck;
pub mod ssim;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GaussianCloud, ParamGroup, ParamLayout};
use crate::render::{render_backward, render_state, Camera, PixelGrads, RenderBuffers, RenderSettings};

pub use gradcheck::{check_gradients, gradient_fixture, CheckOptions, GradFixture, GradReport, GroupReport};

/// Weights of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_depth: f64,
    pub lambda_enac: f64,
    /// Pixels with accumulated alpha at or below this are excluded from ENAC.
    pub alpha_eps: f64,
    /// Treat depth-derived normals as constants in the ENAC gradient.
    pub enac_detach_depth: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ssim: 0.2,
            lambda_depth: 0.1,
            lambda_enac: 0.05,
            alpha_eps: 0.5,
            enac_detach_depth: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_depth", self.lambda_depth),
            ("lambda_enac", self.lambda_enac),
            ("alpha_eps", self.alpha_eps),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::InvalidConfig("lambda_ssim must not exceed 1".into()));
        }
        Ok(())
    }
}

/// Supervision for one frame. Depth 0 marks invalid pixels; `tool_mask`
/// entries that are `true` are excluded from every loss term.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTargets {
    pub color: Vec<[f64; 3]>,
    pub depth: Option<Vec<f64>>,
    pub tool_mask: Option<Vec<bool>>,
}

impl FrameTargets {
    pub fn color_only(color: Vec<[f64; 3]>) -> Self {
        Self {
            color,
            depth: None,
            tool_mask: None,
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        let bad = self.color.len() != n
            || self.depth.as_ref().is_some_and(|d| d.len() != n)
            || self.tool_mask.as_ref().is_some_and(|m| m.len() != n);
        if bad {
            return Err(Error::ShapeMismatch(format!(
                "targets do not match a {n}-pixel render"
            )));
        }
        Ok(())
    }

    fn usable(&self, i: usize) -> bool {
        self.tool_mask.as_ref().is_none_or(|m| !m[i])
    }

    fn usable_mask(&self, n: usize) -> Vec<bool> {
        (0..n).map(|i| self.usable(i)).collect()
    }
}

/// Per-parameter gradients of a cloud, one [`ParamLayout`] stride per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBuffer {
    pub layout: ParamLayout,
    pub data: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros(cloud: &GaussianCloud) -> Self {
        let layout = cloud.layout();
        Self {
            layout,
            data: vec![0.0; layout.stride() * cloud.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.layout.stride()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn gaussian(&self, i: usize) -> &[f64] {
        let s = self.layout.stride();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn group(&self, i: usize, group: ParamGroup) -> &[f64] {
        &self.gaussian(i)[self.layout.range(group)]
    }

    /// Index of the first Gaussian with a non-finite partial.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| p / self.layout.stride())
    }
}

/// Normals derived from a depth map by central differences of back-projected
/// points.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub normals: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
}

fn backproject(depth: &[f64], cam: &Camera, u: usize, v: usize) -> Vector3<f64> {
    cam.pixel_ray(u, v) * depth[v * cam.width + u]
}

struct DepthNormal {
    n: Vector3<f64>,
    m_norm: f64,
    sign: f64,
    a: Vector3<f64>,
    b: Vector3<f64>,
}

fn depth_normal_at(depth: &[f64], cam: &Camera, u: usize, v: usize) -> Option<DepthNormal> {
    let w = cam.width;
    if u == 0 || v == 0 || u + 1 >= w || v + 1 >= cam.height {
        return None;
    }
    let idx = [(u, v), (u + 1, v), (u - 1, v), (u, v + 1), (u, v - 1)];
    if idx.iter().any(|&(x, y)| !(depth[y * w + x] > 0.0)) {
        return None;
    }
    let a = backproject(depth, cam, u + 1, v) - backproject(depth, cam, u - 1, v);
    let b = backproject(depth, cam, u, v + 1) - backproject(depth, cam, u, v - 1);
    let m = a.cross(&b);
    let m_norm = m.norm();
    if !(m_norm > 0.0) {
        return None;
    }
    let p = backproject(depth, cam, u, v);
    let sign = if m.dot(&p) > 0.0 { -1.0 } else { 1.0 };
    Some(DepthNormal {
        n: m * (sign / m_norm),
        m_norm,
        sign,
        a,
        b,
    })
}

/// Camera-frame normals of the surface described by `depth`, oriented toward
/// the camera. Border pixels and pixels with an invalid neighbor are masked.
pub fn normals_from_depth(depth: &[f64], cam: &Camera) -> NormalMap {
    let n = cam.pixel_count();
    let mut out = NormalMap {
        normals: vec![[0.0; 3]; n],
        valid: vec![false; n],
    };
    for v in 0..cam.height {
        for u in 0..cam.width {
            if let Some(dn) = depth_normal_at(depth, cam, u, v) {
                let i = v * cam.width + u;
                out.normals[i] = [dn.n.x, dn.n.y, dn.n.z];
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Pulls normal-map gradients back onto the depth map.
pub fn normals_from_depth_backward(depth: &[f64], cam: &Camera, g_normals: &[[f64; 3]]) -> Vec<f64> {
    let w = cam.width;
    let mut g_depth = vec![0.0; depth.len()];
    for v in 0..cam.height {
        for u in 0..w {
            let gn = Vector3::from(g_normals[v * w + u]);
            if gn == Vector3::zeros() {
                continue;
            }
            let Some(dn) = depth_normal_at(depth, cam, u, v) else {
                continue;
            };
            let g_m = (gn - dn.n * dn.n.dot(&gn)) * (dn.sign / dn.m_norm);
            let g_a = dn.b.cross(&g_m);
            let g_b = g_m.cross(&dn.a);
            let mut push = |x: usize, y: usize, g: Vector3<f64>| {
                g_depth[y * w + x] += g.dot(&cam.pixel_ray(x, y));
            };
            push(u + 1, v, g_a);
            push(u - 1, v, -g_a);
            push(u, v + 1, g_b);
            push(u, v - 1, -g_b);
        }
    }
    g_depth
}

/// Mean over masked pixels of `Σ_k |a_k - b_k|`; 0 for an empty mask.
pub fn enac_loss(n_depth: &[[f64; 3]], n_gauss: &[[f64; 3]], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..mask.len() {
        if mask[i] {
            sum += (0..3).map(|k| (n_depth[i][k] - n_gauss[i][k]).abs()).sum::<f64>();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// `render + λ_enac · enac`.
pub fn total_loss(render: f64, enac: f64, lambda_enac: f64) -> f64 {
    render + lambda_enac * enac
}

/// Loss values for one frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l1: f64,
    pub ssim: f64,
    pub depth: f64,
    pub render: f64,
    pub enac: f64,
    pub total: f64,
}

fn mean_abs_color(x: &[[f64; 3]], y: &[[f64; 3]], valid: &[bool]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..x.len() {
        if valid[i] {
            for c in 0..3 {
                sum += (x[i][c] - y[i][c]).abs();
            }
            count += 3;
        }
    }
    (if count == 0 { 0.0 } else { sum / count as f64 }, count)
}

fn depth_valid(targets: &FrameTargets) -> Option<(Vec<bool>, usize)> {
    let d = targets.depth.as_ref()?;
    let valid: Vec<bool> = (0..d.len()).map(|i| d[i] > 0.0 && targets.usable(i)).collect();
    let count = valid.iter().filter(|&&v| v).count();
    Some((valid, count))
}

/// Photometric and depth loss of a rendered frame.
pub fn render_loss(rendered: &RenderBuffers, targets: &FrameTargets, weights: &LossWeights) -> Result<LossBreakdown> {
    let n = rendered.pixel_count();
    targets.check(n)?;
    let usable = targets.usable_mask(n);
    let (l1, _) = mean_abs_color(&rendered.color, &targets.color, &usable);
    let s = ssim::ssim(&rendered.color, &targets.color, rendered.width, rendered.height, Some(&usable));
    let mut depth = 0.0;
    if let (Some((valid, count)), Some(td)) = (depth_valid(targets), targets.depth.as_ref()) {
        if count > 0 {
            depth = (0..n)
                .filter(|&i| valid[i])
                .map(|i| (rendered.depth[i] - td[i]).abs())
                .sum::<f64>()
                / count as f64;
        }
    }
    let render = (1.0 - weights.lambda_ssim) * l1 + weights.lambda_ssim * (1.0 - s) + weights.lambda_depth * depth;
    Ok(LossBreakdown {
        l1,
        ssim: s,
        depth,
        render,
        enac: 0.0,
        total: render,
    })
}

fn enac_mask(rendered: &RenderBuffers, nd: &NormalMap, targets: &FrameTargets, weights: &LossWeights) -> Vec<bool> {
    (0..rendered.pixel_count())
        .map(|i| rendered.alpha[i] > weights.alpha_eps && nd.valid[i] && targets.usable(i))
        .collect()
}

/// Full loss of a rendered frame, including ENAC.
pub fn frame_loss(
    rendered: &RenderBuffers,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let mut out = render_loss(rendered, targets, weights)?;
    if weights.lambda_enac > 0.0 {
        let nd = normals_from_depth(&rendered.depth, cam);
        let mask = enac_mask(rendered, &nd, targets, weights);
        out.enac = enac_loss(&nd.normals, &rendered.normal, &mask);
    }
    out.total = total_loss(out.render, out.enac, weights.lambda_enac);
    Ok(out)
}

/// Gradient of [`frame_loss`] with respect to the output buffers.
pub fn frame_loss_backward(
    rendered: &RenderBuffers,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
) -> Result<PixelGrads> {
    let n = rendered.pixel_count();
    targets.check(n)?;
    let (w, h) = (rendered.width, rendered.height);
    let mut g = RenderBuffers::zeros(w, h);
    let usable = targets.usable_mask(n);

    let (_, count) = mean_abs_color(&rendered.color, &targets.color, &usable);
    if count > 0 {
        let k = (1.0 - weights.lambda_ssim) / count as f64;
        for i in 0..n {
            if usable[i] {
                for c in 0..3 {
                    g.color[i][c] += k * (rendered.color[i][c] - targets.color[i][c]).signum();
                }
            }
        }
    }
    if weights.lambda_ssim > 0.0 {
        let valid_count = 3 * usable.iter().filter(|&&v| v).count();
        if valid_count > 0 {
            let a = -weights.lambda_ssim / valid_count as f64;
            let up: Vec<f64> = usable.iter().map(|&v| if v { a } else { 0.0 }).collect();
            let (xp, yp) = (ssim::planes(&rendered.color), ssim::planes(&targets.color));
            for c in 0..3 {
                let gc = ssim::ssim_map_backward(&xp[c], &yp[c], w, h, &up);
                for i in 0..n {
                    g.color[i][c] += gc[i];
                }
            }
        }
    }
    if weights.lambda_depth > 0.0 {
        if let (Some((valid, count)), Some(td)) = (depth_valid(targets), targets.depth.as_ref()) {
            if count > 0 {
                let k = weights.lambda_depth / count as f64;
                for i in 0..n {
                    if valid[i] {
                        g.depth[i] += k * (rendered.depth[i] - td[i]).signum();
                    }
                }
            }
        }
    }
    if weights.lambda_enac > 0.0 {
        let nd = normals_from_depth(&rendered.depth, cam);
        let mask = enac_mask(rendered, &nd, targets, weights);
        let count = mask.iter().filter(|&&v| v).count();
        if count > 0 {
            let k = weights.lambda_enac / count as f64;
            let mut g_nd = vec![[0.0; 3]; n];
            for i in 0..n {
                if mask[i] {
                    for c in 0..3 {
                        let s = (nd.normals[i][c] - rendered.normal[i][c]).signum();
                        g_nd[i][c] = k * s;
                        g.normal[i][c] -= k * s;
                    }
                }
            }
            if !weights.enac_detach_depth {
                let gd = normals_from_depth_backward(&rendered.depth, cam, &g_nd);
                for i in 0..n {
                    g.depth[i] += gd[i];
                }
            }
        }
    }
    Ok(g)
}

/// Result of [`backward_full`].
#[derive(Clone, Debug)]
pub struct BackwardOutput {
    pub loss: LossBreakdown,
    pub grads: GradientBuffer,
    /// Per-Gaussian norm of the gradient with respect to the projected mean.
    pub screen_grad: Vec<f64>,
    /// Whether each Gaussian produced a splat in this frame.
    pub visible: Vec<bool>,
    pub rendered: RenderBuffers,
}

/// Loss value and its gradient with respect to every parameter of `cloud`.
pub fn backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
) -> Result<(f64, GradientBuffer)> {
    let out = backward_full(cloud, cam, targets, weights, &RenderSettings::default())?;
    Ok((out.loss.total, out.grads))
}

pub fn backward_full(
    cloud: &GaussianCloud,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
    settings: &RenderSettings,
) -> Result<BackwardOutput> {
    let state = render_state(cloud, cam, settings);
    let loss = frame_loss(&state.buffers, cam, targets, weights)?;
    let pixel_grads = frame_loss_backward(&state.buffers, cam, targets, weights)?;
    let mut grads = GradientBuffer::zeros(cloud);
    let stats = render_backward(cloud, cam, &state, &pixel_grads, settings, &mut grads.data);
    if let Some(index) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(BackwardOutput {
        loss,
        grads,
        screen_grad: stats.screen_grad,
        visible: stats.visible,
        rendered: state.buffers,
    })
}

/// Forward-only loss evaluation.
pub fn evaluate_loss(
    cloud: &GaussianCloud,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
    settings: &RenderSettings,
) -> Result<LossBreakdown> {
    let rendered = crate::render::render_with(cloud, cam, settings);
    frame_loss(&rendered, cam, targets, weights)
}
