//! Initial clouds for training.

use nalgebra::Vector3;
use rand::Rng;

use super::TrainConfig;
use crate::appearance::AppearanceConfig;
use crate::field::{logit, Gaussian4D, GaussianCloud};
use crate::geometry::{quat_normalize, Rotor4, Scales4};
use crate::io::SceneDataset;

fn random_spatial_rotor<R: Rng>(rng: &mut R) -> Rotor4 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-3 && n2 <= 1.0 {
            return Rotor4::from_spatial(quat_normalize(q));
        }
    }
}

/// Seeds a cloud from stratified random pixels of the first
/// `config.init_frames` frames back-projected through their depth, or
/// uniformly in the scene bounds when no depth is available.
pub fn initialize<R: Rng>(
    dataset: &SceneDataset,
    appearance: AppearanceConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(appearance);
    let total = config.init_points;
    if total == 0 || dataset.is_empty() {
        return cloud;
    }
    let opacity_logit = logit(config.init_opacity);
    let with_depth: Vec<_> = dataset
        .frames
        .iter()
        .filter(|f| f.targets.depth.is_some())
        .take(config.init_frames.max(1))
        .collect();

    if !with_depth.is_empty() {
        let per_frame = total.div_ceil(with_depth.len());
        for frame in with_depth {
            let cam = &frame.camera;
            let depth = frame.targets.depth.as_ref().expect("filtered on depth");
            let aspect = cam.width as f64 / cam.height as f64;
            let gx = ((per_frame as f64 * aspect).sqrt().ceil() as usize).clamp(1, cam.width);
            let gy = per_frame.div_ceil(gx).clamp(1, cam.height);
            let (cw, ch) = (cam.width as f64 / gx as f64, cam.height as f64 / gy as f64);
            for cy in 0..gy {
                for cx in 0..gx {
                    if cloud.len() >= total {
                        break;
                    }
                    let u = ((cx as f64 + rng.random::<f64>()) * cw) as usize;
                    let v = ((cy as f64 + rng.random::<f64>()) * ch) as usize;
                    let (u, v) = (u.min(cam.width - 1), v.min(cam.height - 1));
                    let i = v * cam.width + u;
                    let d = depth[i];
                    let tool = frame.targets.tool_mask.as_ref().is_some_and(|m| m[i]);
                    if !(d > 0.0) || tool {
                        continue;
                    }
                    let p = cam.rotation.transpose() * (cam.pixel_ray(u, v) * d - cam.translation);
                    let footprint = d * cw.max(ch) / cam.fx;
                    let s: [f64; 3] = std::array::from_fn(|_| footprint * config.init_scale * rng.random_range(0.8..1.25));
                    cloud.gaussians.push(Gaussian4D {
                        mean: [p.x, p.y, p.z, cam.time],
                        rotor: random_spatial_rotor(rng),
                        scales: Scales4::from_linear([s[0], s[1], s[2], config.init_time_scale]),
                        opacity_logit,
                        appearance: appearance.constant_color(frame.targets.color[i]),
                    });
                }
            }
        }
        return cloud;
    }

    let [lo, hi] = dataset.bbox;
    let lo = Vector3::from(lo);
    let hi = Vector3::from(hi);
    let size = (hi - lo).norm() / (total as f64).cbrt();
    for _ in 0..total {
        let p: [f64; 3] = std::array::from_fn(|k| rng.random_range(lo[k]..=hi[k]));
        let rgb: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let s = 0.5 * size;
        cloud.gaussians.push(Gaussian4D {
            mean: [p[0], p[1], p[2], rng.random_range(0.0..=1.0)],
            rotor: random_spatial_rotor(rng),
            scales: Scales4::from_linear([s, s, s, config.init_time_scale]),
            opacity_logit,
            appearance: appearance.constant_color(rgb),
        });
    }
    cloud
}
