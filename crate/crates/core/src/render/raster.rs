//! Depth-sorted front-to-back compositing on 16×16 tiles, plus its adjoint.

use rayon::prelude::*;

use super::camera::Camera;
use super::project::{SplatGrad, Splat2D};
use super::{PixelGrads, RenderBuffers};

/// Per-splat weight clamp.
pub const MAX_WEIGHT: f64 = 0.99;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Accumulated alpha below which depth and normal are reported as zero.
pub const DEPTH_ALPHA_EPS: f64 = 1e-6;

pub const DEFAULT_TILE_SIZE: usize = 16;

/// Global depth order (ties broken by parent index).
pub fn depth_order(splats: &[Splat2D]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].parent_index.cmp(&splats[b].parent_index))
            .then(a.cmp(&b))
    });
    order
}

/// Tile binning of depth-sorted splats.
pub(crate) struct TilePlan {
    pub tile_size: usize,
    pub tiles_x: usize,
    /// Splat indices per tile, in depth order.
    pub bins: Vec<Vec<u32>>,
}

impl TilePlan {
    pub fn new(splats: &[Splat2D], cam: &Camera, tile_size: usize) -> Self {
        let tile_size = tile_size.max(1);
        let tiles_x = cam.width.div_ceil(tile_size);
        let tiles_y = cam.height.div_ceil(tile_size);
        let order = depth_order(splats);
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        let ts = tile_size as f64;
        for &i in &order {
            let s = &splats[i];
            let lo_x = ((s.mean2[0] - s.radius) / ts).floor();
            let hi_x = ((s.mean2[0] + s.radius) / ts).floor();
            let lo_y = ((s.mean2[1] - s.radius) / ts).floor();
            let hi_y = ((s.mean2[1] + s.radius) / ts).floor();
            if hi_x < 0.0 || hi_y < 0.0 || lo_x >= tiles_x as f64 || lo_y >= tiles_y as f64 {
                continue;
            }
            let x0 = lo_x.max(0.0) as usize;
            let y0 = lo_y.max(0.0) as usize;
            let x1 = (hi_x as usize).min(tiles_x - 1);
            let y1 = (hi_y as usize).min(tiles_y - 1);
            for ty in y0..=y1 {
                for tx in x0..=x1 {
                    bins[ty * tiles_x + tx].push(i as u32);
                }
            }
        }
        Self {
            tile_size,
            tiles_x,
            bins,
        }
    }

    fn tile_pixels(&self, tile: usize, cam: &Camera) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0..(x0 + self.tile_size).min(cam.width),
            y0..(y0 + self.tile_size).min(cam.height),
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct PixelOut {
    pub color: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
    pub normal: [f64; 3],
    depth_sum: f64,
    normal_sum: [f64; 3],
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Contribution {
    pub splat: usize,
    /// Position of the splat in the composited list.
    pub pos: usize,
    pub weight: f64,
    pub transmittance: f64,
    pub gauss: f64,
    pub clamped: bool,
}

#[inline]
fn splat_q(s: &Splat2D, px: f64, py: f64) -> f64 {
    let dx = px - s.mean2[0];
    let dy = py - s.mean2[1];
    s.inv_cov2.xx * dx * dx + 2.0 * s.inv_cov2.xy * dx * dy + s.inv_cov2.yy * dy * dy
}

/// Composites the splats listed (front to back) at pixel center `(px, py)`.
pub(crate) fn composite_pixel(
    splats: &[Splat2D],
    list: impl Iterator<Item = usize>,
    px: f64,
    py: f64,
    mut record: Option<&mut Vec<Contribution>>,
) -> PixelOut {
    let mut out = PixelOut::default();
    let mut t = 1.0;
    for (pos, i) in list.enumerate() {
        let s = &splats[i];
        let q = splat_q(s, px, py);
        if q > s.q_cutoff {
            continue;
        }
        let gauss = (-0.5 * q).exp();
        let raw = s.eff_opacity * gauss;
        let clamped = raw > MAX_WEIGHT;
        let w = if clamped { MAX_WEIGHT } else { raw };
        let c = w * t;
        for k in 0..3 {
            out.color[k] += c * s.color[k];
            out.normal_sum[k] += c * s.normal_cam[k];
        }
        out.alpha += c;
        out.depth_sum += c * s.depth;
        if let Some(rec) = record.as_deref_mut() {
            rec.push(Contribution {
                splat: i,
                pos,
                weight: w,
                transmittance: t,
                gauss,
                clamped,
            });
        }
        t *= 1.0 - w;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    if out.alpha > DEPTH_ALPHA_EPS {
        out.depth = out.depth_sum / out.alpha;
        let n = out.normal_sum;
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len > 0.0 {
            out.normal = n.map(|v| v / len);
        }
    }
    out
}

fn write_pixel(buf: &mut RenderBuffers, idx: usize, p: &PixelOut) {
    buf.color[idx] = p.color;
    buf.alpha[idx] = p.alpha;
    buf.depth[idx] = p.depth;
    buf.normal[idx] = p.normal;
}

/// Tiled rasterization. Serial and parallel execution give identical buffers.
pub fn rasterize(splats: &[Splat2D], cam: &Camera, tile_size: usize, parallel: bool) -> RenderBuffers {
    let plan = TilePlan::new(splats, cam, tile_size);
    rasterize_planned(splats, &plan, cam, parallel)
}

pub(crate) fn rasterize_planned(
    splats: &[Splat2D],
    plan: &TilePlan,
    cam: &Camera,
    parallel: bool,
) -> RenderBuffers {
    let render_tile = |tile: usize| -> Vec<(usize, PixelOut)> {
        let (xs, ys) = plan.tile_pixels(tile, cam);
        let bin = &plan.bins[tile];
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for y in ys {
            for x in xs.clone() {
                let p = composite_pixel(
                    splats,
                    bin.iter().map(|&i| i as usize),
                    x as f64 + 0.5,
                    y as f64 + 0.5,
                    None,
                );
                out.push((y * cam.width + x, p));
            }
        }
        out
    };
    let n_tiles = plan.bins.len();
    let tiles: Vec<Vec<(usize, PixelOut)>> = if parallel {
        (0..n_tiles).into_par_iter().map(render_tile).collect()
    } else {
        (0..n_tiles).map(render_tile).collect()
    };
    let mut buf = RenderBuffers::zeros(cam.width, cam.height);
    for tile in tiles {
        for (idx, p) in tile {
            write_pixel(&mut buf, idx, &p);
        }
    }
    buf
}

/// Reference compositor: every splat is evaluated at every pixel with no
/// tiling or footprint culling.
pub fn rasterize_naive(splats: &[Splat2D], cam: &Camera) -> RenderBuffers {
    let order = depth_order(splats);
    let mut buf = RenderBuffers::zeros(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let p = composite_pixel(splats, order.iter().copied(), x as f64 + 0.5, y as f64 + 0.5, None);
            write_pixel(&mut buf, y * cam.width + x, &p);
        }
    }
    buf
}

/// Adjoint of [`rasterize_planned`]: accumulates per-splat gradients from
/// per-pixel output gradients. Tiles are merged in a fixed order.
pub(crate) fn rasterize_backward(
    splats: &[Splat2D],
    plan: &TilePlan,
    cam: &Camera,
    upstream: &PixelGrads,
    parallel: bool,
) -> Vec<SplatGrad> {
    let tile_grads = |tile: usize| -> Vec<SplatGrad> {
        let (xs, ys) = plan.tile_pixels(tile, cam);
        let bin = &plan.bins[tile];
        let mut local = vec![SplatGrad::default(); bin.len()];
        if bin.is_empty() {
            return local;
        }
        let mut rec = Vec::with_capacity(bin.len());
        for y in ys {
            for x in xs.clone() {
                let idx = y * cam.width + x;
                rec.clear();
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let out = composite_pixel(splats, bin.iter().map(|&i| i as usize), px, py, Some(&mut rec));
                pixel_backward(splats, &rec, &out, upstream, idx, px, py, &mut local);
            }
        }
        local
    };
    let n_tiles = plan.bins.len();
    let per_tile: Vec<Vec<SplatGrad>> = if parallel {
        (0..n_tiles).into_par_iter().map(tile_grads).collect()
    } else {
        (0..n_tiles).map(tile_grads).collect()
    };
    let mut grads = vec![SplatGrad::default(); splats.len()];
    for (tile, local) in per_tile.iter().enumerate() {
        for (k, &i) in plan.bins[tile].iter().enumerate() {
            grads[i as usize].add(&local[k]);
        }
    }
    grads
}

#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    splats: &[Splat2D],
    rec: &[Contribution],
    out: &PixelOut,
    upstream: &PixelGrads,
    idx: usize,
    px: f64,
    py: f64,
    local: &mut [SplatGrad],
) {
    let g_color = upstream.color[idx];
    let g_depth = upstream.depth[idx];
    let g_normal = upstream.normal[idx];
    let mut g_alpha = upstream.alpha[idx];
    let mut g_dsum = 0.0;
    let mut g_nsum = [0.0; 3];
    if out.alpha > DEPTH_ALPHA_EPS {
        g_dsum = g_depth / out.alpha;
        g_alpha -= g_depth * out.depth / out.alpha;
        let ns = out.normal_sum;
        let len = (ns[0] * ns[0] + ns[1] * ns[1] + ns[2] * ns[2]).sqrt();
        if len > 0.0 {
            let n = out.normal;
            let dot = n[0] * g_normal[0] + n[1] * g_normal[1] + n[2] * g_normal[2];
            for k in 0..3 {
                g_nsum[k] = (g_normal[k] - n[k] * dot) / len;
            }
        }
    }
    if g_color == [0.0; 3] && g_alpha == 0.0 && g_dsum == 0.0 && g_nsum == [0.0; 3] {
        return;
    }

    let mut suffix = 0.0;
    for c in rec.iter().rev() {
        let s = &splats[c.splat];
        let feat_dot = g_color[0] * s.color[0]
            + g_color[1] * s.color[1]
            + g_color[2] * s.color[2]
            + g_alpha
            + g_dsum * s.depth
            + g_nsum[0] * s.normal_cam[0]
            + g_nsum[1] * s.normal_cam[1]
            + g_nsum[2] * s.normal_cam[2];
        let contrib = c.weight * c.transmittance;
        let g_w = c.transmittance * feat_dot - suffix / (1.0 - c.weight);
        suffix += contrib * feat_dot;

        let g = &mut local[c.pos];
        for k in 0..3 {
            g.color[k] += contrib * g_color[k];
            g.normal[k] += contrib * g_nsum[k];
        }
        g.depth += contrib * g_dsum;
        if c.clamped {
            continue;
        }
        g.eff_opacity += g_w * c.gauss;
        let g_pow = g_w * c.weight;
        let dx = px - s.mean2[0];
        let dy = py - s.mean2[1];
        g.conic[0] += g_pow * (-0.5 * dx * dx);
        g.conic[1] += g_pow * (-dx * dy);
        g.conic[2] += g_pow * (-0.5 * dy * dy);
        let inv = &s.inv_cov2;
        g.mean2[0] += g_pow * (inv.xx * dx + inv.xy * dy);
        g.mean2[1] += g_pow * (inv.xy * dx + inv.yy * dy);
    }
}
