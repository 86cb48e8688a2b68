//! Forward rendering of a Gaussian cloud at a camera's timestamp, and the
//! adjoint pass that maps pixel gradients back onto Gaussian parameters.

pub mod camera;
pub mod project;
pub mod raster;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

pub use camera::Camera;
pub use project::{gaussian_normal, project, Splat2D, FOOTPRINT_CUTOFF, KAPPA};
pub use raster::{depth_order, rasterize, rasterize_naive, DEFAULT_TILE_SIZE};

use crate::appearance::{color_backward, eval_color_degree};
use crate::field::{
    condition_backward, condition_with_cache, temporal_weight, ConditionCache, GaussianCloud,
    DEFAULT_TIME_CULL,
};
use crate::field::ParamGroup;
use project::{
    normal_backward, normal_with_cache, project_covariance, projection_backward, NormalCache,
    ProjectionCache,
};
use raster::{rasterize_backward, rasterize_planned, TilePlan};

/// Per-pixel output images, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    /// Alpha-normalized expected camera depth; 0 where nothing is rendered.
    pub depth: Vec<f64>,
    /// Composited camera-frame normal.
    pub normal: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
}

impl RenderBuffers {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0.0; 3]; n],
            depth: vec![0.0; n],
            normal: vec![[0.0; 3]; n],
            alpha: vec![0.0; n],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Gradients of a scalar objective with respect to every output buffer.
pub type PixelGrads = RenderBuffers;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub tile_size: usize,
    /// Gaussians whose temporal weight falls below this are skipped.
    pub time_cull: f64,
    /// Restricts color evaluation to SH bands `0..=degree`.
    pub sh_degree: Option<usize>,
    pub parallel: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            time_cull: DEFAULT_TIME_CULL,
            sh_degree: None,
            parallel: true,
        }
    }
}

struct SplatRecord {
    gaussian: usize,
    cond: ConditionCache,
    proj: ProjectionCache,
    normal: NormalCache,
    dir: Vector3<f64>,
}

/// Everything a backward pass needs from one forward render.
pub(crate) struct FrameState {
    pub splats: Vec<Splat2D>,
    records: Vec<SplatRecord>,
    plan: TilePlan,
    pub buffers: RenderBuffers,
}

fn sh_degree(cloud: &GaussianCloud, settings: &RenderSettings) -> usize {
    settings
        .sh_degree
        .unwrap_or(cloud.appearance.sh_degree)
        .min(cloud.appearance.sh_degree)
}

fn build_splat(
    cloud: &GaussianCloud,
    cam: &Camera,
    index: usize,
    degree: usize,
) -> Option<(Splat2D, SplatRecord)> {
    let g = &cloud.gaussians[index];
    let (cg, cond) = condition_with_cache(g, cam.time, index);
    let eff = g.opacity() * cg.temporal_weight;
    let (cov2, proj) = project_covariance(&cg, cam)?;
    let inv_cov2 = cov2.inverse()?;
    let radius = project::footprint_radius(&cov2, eff)?;
    let mean2 = cam.project_point(&proj.p);
    if mean2[0] + radius < 0.0
        || mean2[1] + radius < 0.0
        || mean2[0] - radius > cam.width as f64
        || mean2[1] - radius > cam.height as f64
    {
        return None;
    }
    let dir = cg.mu3 - cam.center();
    let color = eval_color_degree(&cloud.appearance, &g.appearance, cam.time, &dir.normalize(), degree);
    let (n, normal) = normal_with_cache(&cg, cam);
    let splat = Splat2D {
        mean2,
        cov2,
        inv_cov2,
        depth: proj.p.z,
        color,
        normal_cam: [n.x, n.y, n.z],
        eff_opacity: eff,
        parent_index: index,
        radius,
        q_cutoff: project::q_cutoff(eff),
    };
    Some((
        splat,
        SplatRecord {
            gaussian: index,
            cond,
            proj,
            normal,
            dir,
        },
    ))
}

fn collect_splats(
    cloud: &GaussianCloud,
    cam: &Camera,
    settings: &RenderSettings,
) -> (Vec<Splat2D>, Vec<SplatRecord>) {
    let degree = sh_degree(cloud, settings);
    let visible = |i: usize| temporal_weight(&cloud.gaussians[i], cam.time) >= settings.time_cull;
    let build = |i: usize| {
        if visible(i) {
            build_splat(cloud, cam, i, degree)
        } else {
            None
        }
    };
    let built: Vec<Option<(Splat2D, SplatRecord)>> = if settings.parallel {
        (0..cloud.len()).into_par_iter().map(build).collect()
    } else {
        (0..cloud.len()).map(build).collect()
    };
    built.into_iter().flatten().unzip()
}

/// Conditions, culls, shades and projects every Gaussian for `cam`.
pub fn prepare_splats(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> Vec<Splat2D> {
    collect_splats(cloud, cam, settings).0
}

pub(crate) fn render_state(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> FrameState {
    let (splats, records) = collect_splats(cloud, cam, settings);
    let plan = TilePlan::new(&splats, cam, settings.tile_size);
    let buffers = rasterize_planned(&splats, &plan, cam, settings.parallel);
    FrameState {
        splats,
        records,
        plan,
        buffers,
    }
}

/// Renders `cloud` at `cam.time` with default settings.
pub fn render(cloud: &GaussianCloud, cam: &Camera) -> RenderBuffers {
    render_with(cloud, cam, &RenderSettings::default())
}

pub fn render_with(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> RenderBuffers {
    render_state(cloud, cam, settings).buffers
}

/// Reference renderer: identical splats, composited per pixel over the full
/// depth-sorted list without tiles or footprint culling.
pub fn render_naive(cloud: &GaussianCloud, cam: &Camera, settings: &RenderSettings) -> RenderBuffers {
    let splats = prepare_splats(cloud, cam, settings);
    rasterize_naive(&splats, cam)
}

/// Output of [`render_backward`].
pub(crate) struct BackwardStats {
    /// Norm of the loss gradient with respect to each Gaussian's projected
    /// mean (pixels), 0 when not rendered.
    pub screen_grad: Vec<f64>,
    pub visible: Vec<bool>,
}

/// Accumulates parameter gradients into `grads` (flat, one layout stride per
/// Gaussian).
pub(crate) fn render_backward(
    cloud: &GaussianCloud,
    cam: &Camera,
    state: &FrameState,
    upstream: &PixelGrads,
    settings: &RenderSettings,
    grads: &mut [f64],
) -> BackwardStats {
    let layout = cloud.layout();
    let stride = layout.stride();
    let degree = sh_degree(cloud, settings);
    let splat_grads = rasterize_backward(&state.splats, &state.plan, cam, upstream, settings.parallel);

    let per_splat = |k: usize| -> Vec<f64> {
        let splat = &state.splats[k];
        let rec = &state.records[k];
        let sg = &splat_grads[k];
        let g = &cloud.gaussians[rec.gaussian];
        let mut out = vec![0.0; stride];

        let alpha = g.opacity();
        let s_tt = rec.cond.cov4[(3, 3)];
        let weight = (-(rec.cond.delta * rec.cond.delta) / (2.0 * s_tt)).exp();
        out[layout.range(ParamGroup::Opacity).start] = sg.eff_opacity * weight * alpha * (1.0 - alpha);
        let g_weight = sg.eff_opacity * alpha;

        let cfg = &cloud.appearance;
        let mut g_coeffs = vec![[0.0; 3]; cfg.coeff_count()];
        let mut g_phases = vec![0.0; cfg.phase_count()];
        let g_dir = color_backward(
            cfg,
            &g.appearance,
            cam.time,
            &rec.dir,
            degree,
            sg.color,
            &mut g_coeffs,
            &mut g_phases,
        );

        let g_n = Vector3::from(sg.normal);
        let g_cov3_normal: Matrix3<f64> = normal_backward(&rec.normal, cam, &g_n);
        let (g_p, g_cov3_proj) = projection_backward(splat, &rec.proj, cam, sg);
        let g_mu3 = cam.rotation.transpose() * g_p + g_dir;
        let g_cov3 = g_cov3_proj + g_cov3_normal;
        let geo = condition_backward(g, &rec.cond, &g_mu3, &g_cov3, g_weight);

        out[layout.range(ParamGroup::Position)].copy_from_slice(&geo.mean);
        let rotor = layout.range(ParamGroup::Rotor);
        out[rotor.start..rotor.start + 4].copy_from_slice(&geo.rotor_left);
        out[rotor.start + 4..rotor.end].copy_from_slice(&geo.rotor_right);
        out[layout.range(ParamGroup::Scales)].copy_from_slice(&geo.log_scales);
        let sh = layout.range(ParamGroup::Sh);
        for (i, c) in g_coeffs.iter().enumerate() {
            out[sh.start + 3 * i..sh.start + 3 * i + 3].copy_from_slice(c);
        }
        out[layout.range(ParamGroup::Phases)].copy_from_slice(&g_phases);
        out
    };
    let rows: Vec<Vec<f64>> = if settings.parallel {
        (0..state.splats.len()).into_par_iter().map(per_splat).collect()
    } else {
        (0..state.splats.len()).map(per_splat).collect()
    };

    let mut stats = BackwardStats {
        screen_grad: vec![0.0; cloud.len()],
        visible: vec![false; cloud.len()],
    };
    for (k, row) in rows.iter().enumerate() {
        let i = state.records[k].gaussian;
        for (dst, src) in grads[i * stride..(i + 1) * stride].iter_mut().zip(row) {
            *dst += src;
        }
        let m = splat_grads[k].mean2;
        stats.screen_grad[i] = (m[0] * m[0] + m[1] * m[1]).sqrt();
        stats.visible[i] = true;
    }
    stats
}
