//! Self-consistent synthetic dynamic scenes: a ground-truth cloud of flat
//! disks on a curved tissue-like surface, rendered along a camera orbit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{compute_bbox, Frame, SceneDataset};
use crate::appearance::{sh_index, AppearanceConfig};
use crate::error::{Error, Result};
use crate::field::{logit, Gaussian4D, GaussianCloud};
use crate::geometry::{Rotor4, Scales4};
use crate::losses::FrameTargets;
use crate::render::{render_with, Camera, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Nothing moves.
    Static,
    /// Surface points breathe along their normals as `A sin(2πt)`.
    Oscillating,
    /// Every disk drifts linearly in x through a space-time rotation.
    Shearing,
}

impl FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Motion::Static),
            "oscillating" => Ok(Motion::Oscillating),
            "shearing" => Ok(Motion::Shearing),
            _ => Err(Error::InvalidConfig(format!(
                "unknown motion `{s}` (expected static, oscillating or shearing)"
            ))),
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motion::Static => "static",
            Motion::Oscillating => "oscillating",
            Motion::Shearing => "shearing",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub gaussians: usize,
    pub motion: Motion,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Total horizontal orbit angle in degrees (0 keeps the camera fixed).
    pub orbit_degrees: f64,
    /// Distance from the camera to the orbit target.
    pub distance: f64,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    /// Peak displacement of the oscillating motion.
    pub amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            gaussians: 200,
            motion: Motion::Oscillating,
            width: 64,
            height: 64,
            frames: 20,
            orbit_degrees: 30.0,
            distance: 3.0,
            focal_factor: 1.875,
            amplitude: 0.08,
            seed: 0,
        }
    }
}

/// Ground truth and the dataset rendered from it.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub dataset: SceneDataset,
    /// The undisplaced ground-truth cloud.
    pub cloud: GaussianCloud,
    /// Per-Gaussian oscillation direction scaled by its local amplitude.
    displacement: Vec<[f64; 3]>,
}

const SURFACE_Z: f64 = 3.0;
const HALF_SPAN: f64 = 1.15;
const STATIC_TIME_SCALE: f64 = 1e3;

fn surface_z(x: f64, y: f64) -> f64 {
    SURFACE_Z + 0.25 * (1.3 * x + 0.4).sin() * (1.1 * y).cos()
}

fn surface_normal(x: f64, y: f64) -> Vector3<f64> {
    let dzdx = 0.25 * 1.3 * (1.3 * x + 0.4).cos() * (1.1 * y).cos();
    let dzdy = -0.25 * 1.1 * (1.3 * x + 0.4).sin() * (1.1 * y).sin();
    Vector3::new(dzdx, dzdy, -1.0).normalize()
}

fn tissue_color(x: f64, y: f64) -> [f64; 3] {
    let pattern = (3.0 * x).sin() * (2.5 * y + 0.3).cos();
    let vessel = (-((y - 0.4 * (2.0 * x).sin()).powi(2)) / 0.02).exp();
    [
        0.72 + 0.10 * pattern - 0.25 * vessel,
        0.38 + 0.06 * pattern - 0.15 * vessel,
        0.34 + 0.05 * pattern - 0.08 * vessel,
    ]
}

fn bump(x: f64, y: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * 0.6 * 0.6)).exp()
}

/// Orbit camera for frame `i` of `spec`.
pub fn orbit_camera(spec: &SyntheticSpec, i: usize) -> Camera {
    let frac = if spec.frames > 1 {
        i as f64 / (spec.frames - 1) as f64
    } else {
        0.0
    };
    let theta = (-0.5 + frac) * spec.orbit_degrees.to_radians();
    let target = Vector3::new(0.0, 0.0, SURFACE_Z);
    let eye = target + Vector3::new(-theta.sin(), 0.0, -theta.cos()) * spec.distance;
    Camera::centered(spec.width, spec.height, spec.focal_factor * spec.width as f64)
        .look_at(eye, target, Vector3::new(0.0, 1.0, 0.0))
        .at_time(frac)
}

fn ground_truth(spec: &SyntheticSpec) -> (GaussianCloud, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cfg = AppearanceConfig::default();
    let mut cloud = GaussianCloud::new(cfg);
    let mut displacement = Vec::with_capacity(spec.gaussians);
    let n = spec.gaussians;
    let nx = (n as f64).sqrt().ceil().max(1.0) as usize;
    let ny = n.div_ceil(nx).max(1);
    let (cw, ch) = (2.0 * HALF_SPAN / nx as f64, 2.0 * HALF_SPAN / ny as f64);
    for i in 0..n {
        let x = -HALF_SPAN + ((i % nx) as f64 + rng.random_range(0.1..0.9)) * cw;
        let y = -HALF_SPAN + ((i / nx) as f64 + rng.random_range(0.1..0.9)) * ch;
        let z = surface_z(x, y);
        let normal = surface_normal(x, y);
        let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let t0 = normal.cross(&helper).normalize();
        let t1 = normal.cross(&t0);
        let spin = rng.random_range(0.0..PI);
        let (s, c) = spin.sin_cos();
        let a0 = t0 * c + t1 * s;
        let a1 = normal.cross(&a0);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[a0, a1, normal]));
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let spatial = Rotor4::from_spatial([q.w, q.i, q.j, q.k]);

        let major = 1.25 * cw.max(ch) * rng.random_range(0.6..0.9);
        let minor = major * rng.random_range(0.7..1.0);
        let (rotor, s_t) = match spec.motion {
            Motion::Shearing => (spatial.then(Rotor4::space_time(0, 0.25 * bump(x, y))), 2.0),
            _ => (spatial, STATIC_TIME_SCALE),
        };

        let base = tissue_color(x, y);
        let mut appearance = cfg.constant_color(base.map(|v| (v + rng.random_range(-0.03..0.03)).clamp(0.05, 0.95)));
        for m in -1..=1 {
            appearance.coeffs[sh_index(1, m)] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
        }

        cloud.gaussians.push(Gaussian4D {
            mean: [x, y, z, 0.5],
            rotor,
            scales: Scales4::from_linear([major, minor, 0.01, s_t]),
            opacity_logit: logit(0.95),
            appearance,
        });
        let d = normal * (spec.amplitude * bump(x, y));
        displacement.push([d.x, d.y, d.z]);
    }
    (cloud, displacement)
}

impl SyntheticScene {
    /// The ground-truth cloud at normalized time `t`.
    pub fn ground_truth_at(&self, t: f64) -> GaussianCloud {
        let mut cloud = self.cloud.clone();
        if self.spec.motion == Motion::Oscillating {
            let k = (2.0 * PI * t).sin();
            for (g, d) in cloud.gaussians.iter_mut().zip(&self.displacement) {
                for a in 0..3 {
                    g.mean[a] += k * d[a];
                }
            }
        }
        cloud
    }
}

/// Builds the ground truth for `spec` and renders every frame from it.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    if spec.frames == 0 || spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidConfig("synthetic scenes need frames and a nonzero image size".into()));
    }
    let (cloud, displacement) = ground_truth(spec);
    let mut scene = SyntheticScene {
        spec: spec.clone(),
        dataset: SceneDataset {
            frames: Vec::new(),
            width: spec.width,
            height: spec.height,
            bbox: [[0.0; 3]; 2],
        },
        cloud,
        displacement,
    };
    let settings = RenderSettings::default();
    for i in 0..spec.frames {
        let camera = orbit_camera(spec, i);
        let gt = scene.ground_truth_at(camera.time);
        let out = render_with(&gt, &camera, &settings);
        scene.dataset.frames.push(Frame {
            index: i,
            camera,
            targets: FrameTargets {
                color: out.color,
                depth: Some(out.depth),
                tool_mask: None,
            },
        });
    }
    scene.dataset.bbox = compute_bbox(&scene.dataset.frames);
    Ok(scene)
}
