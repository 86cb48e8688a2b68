//! Central finite-difference verification of the analytic backward pass.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{backward_full, evaluate_loss, FrameTargets, LossWeights};
use crate::appearance::AppearanceConfig;
use crate::error::Result;
use crate::field::{logit, Gaussian4D, GaussianCloud, ParamGroup};
use crate::geometry::{quat_normalize, Rotor4, Scales4};
use crate::render::{Camera, RenderSettings};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub rel_tol: f64,
    /// Absolute error below which a partial passes regardless of the relative error.
    pub abs_tol: f64,
    /// Corrupts the analytic gradient of one group, to confirm the checker
    /// flags it.
    pub inject_fault: Option<ParamGroup>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-7,
            inject_fault: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: ParamGroup,
    /// Largest relative error among partials above the absolute floor.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Largest analytic partial magnitude in the group.
    pub max_grad: f64,
    /// `[gaussian, offset within group]` of the worst partial.
    pub argmax: [usize; 2],
    pub checked: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradReport {
    pub fixture: String,
    pub gaussians: usize,
    pub loss: f64,
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

impl GradReport {
    pub fn failed_groups(&self) -> Vec<ParamGroup> {
        self.groups.iter().filter(|g| !g.passed).map(|g| g.group).collect()
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fixture {} ({} gaussians, loss {:.6e})", self.fixture, self.gaussians, self.loss)?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<8} {} max_rel_err {:.3e} max_abs_err {:.3e} max_grad {:.3e} at gaussian {} offset {} ({} partials)",
                g.group.name(),
                if g.passed { "ok  " } else { "FAIL" },
                g.max_rel_err,
                g.max_abs_err,
                g.max_grad,
                g.argmax[0],
                g.argmax[1],
                g.checked
            )?;
        }
        Ok(())
    }
}

/// Compares analytic partials of the frame loss against central differences
/// for every parameter of `cloud`.
pub fn check_gradients(
    name: &str,
    cloud: &GaussianCloud,
    cam: &Camera,
    targets: &FrameTargets,
    weights: &LossWeights,
    opts: &CheckOptions,
) -> Result<GradReport> {
    let settings = RenderSettings {
        parallel: false,
        ..RenderSettings::default()
    };
    let analytic = backward_full(cloud, cam, targets, weights, &settings)?;
    let layout = cloud.layout();
    let stride = layout.stride();
    let mut grads = analytic.grads.data.clone();
    if let Some(group) = opts.inject_fault {
        for i in 0..cloud.len() {
            for k in layout.range(group) {
                let v = &mut grads[i * stride + k];
                *v = *v * 1.5 + 1e-3;
            }
        }
    }

    let numeric: Vec<Result<f64>> = (0..cloud.len() * stride)
        .into_par_iter()
        .map(|flat| {
            let (i, k) = (flat / stride, flat % stride);
            let eval = |delta: f64| -> Result<f64> {
                let mut c = cloud.clone();
                let mut row = vec![0.0; stride];
                layout.write(&c.gaussians[i], &mut row);
                row[k] += delta;
                layout.read(&row, &mut c.gaussians[i]);
                Ok(evaluate_loss(&c, cam, targets, weights, &settings)?.total)
            };
            Ok((eval(opts.h)? - eval(-opts.h)?) / (2.0 * opts.h))
        })
        .collect();

    let mut groups: Vec<GroupReport> = ParamGroup::ALL
        .iter()
        .map(|&group| GroupReport {
            group,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            max_grad: 0.0,
            argmax: [0, 0],
            checked: 0,
            passed: true,
        })
        .collect();
    for (flat, num) in numeric.into_iter().enumerate() {
        let num = num?;
        let (i, k) = (flat / stride, flat % stride);
        let group = layout.group_of(k);
        let r = groups.iter_mut().find(|g| g.group == group).expect("group present");
        let a = grads[flat];
        let abs = (a - num).abs();
        let scale = a.abs().max(num.abs());
        let rel = if abs <= opts.abs_tol || scale == 0.0 { 0.0 } else { abs / scale };
        let worse = rel > r.max_rel_err || (rel == r.max_rel_err && abs > r.max_abs_err);
        if r.checked == 0 || worse {
            r.argmax = [i, k - layout.range(group).start];
        }
        r.checked += 1;
        r.max_rel_err = r.max_rel_err.max(rel);
        r.max_abs_err = r.max_abs_err.max(abs);
        r.max_grad = r.max_grad.max(a.abs());
    }
    for g in &mut groups {
        g.passed = g.max_rel_err <= opts.rel_tol;
    }
    groups.retain(|g| g.checked > 0);
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradReport {
        fixture: name.to_string(),
        gaussians: cloud.len(),
        loss: analytic.loss.total,
        groups,
        passed,
    })
}

/// A small scene with every loss term active.
#[derive(Clone, Debug)]
pub struct GradFixture {
    pub name: String,
    pub cloud: GaussianCloud,
    pub cam: Camera,
    pub targets: FrameTargets,
    pub weights: LossWeights,
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 0.05 && n2 < 1.0 {
            return quat_normalize(q);
        }
    }
}

fn random_rotor(rng: &mut ChaCha8Rng, tilt: f64) -> Rotor4 {
    let mut r = Rotor4::from_spatial(random_quat(rng));
    for axis in 0..3 {
        r = r.then(Rotor4::space_time(axis, rng.random_range(-tilt..tilt)));
    }
    r
}

fn random_appearance(rng: &mut ChaCha8Rng, cfg: &AppearanceConfig, base: [f64; 3]) -> crate::appearance::AppearanceCoeffs {
    let mut a = cfg.constant_color(base);
    for c in a.coeffs.iter_mut().skip(1) {
        *c = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
    }
    for p in a.phases.iter_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    a
}

/// Deterministic fixture of `count` Gaussians rendered at `size × size`.
///
/// The scene is built to keep the loss smooth around the evaluation point:
/// every rendered color stays below every target color, target depth lies far
/// behind the scene, opacities stay below the weight clamp, and spatial scales
/// are distinct so the normal direction is well defined.
pub fn gradient_fixture(count: usize, size: usize, seed: u64) -> GradFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = AppearanceConfig::default();
    let cam = Camera::centered(size, size, size as f64)
        .look_at(
            Vector3::new(0.3, -0.2, -0.5),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(0.0, 1.0, 0.0),
        )
        .at_time(0.5);
    let mut cloud = GaussianCloud::new(cfg);
    if count == 1 {
        cloud.gaussians.push(Gaussian4D {
            mean: [0.1, -0.05, 3.0, 0.45],
            rotor: random_rotor(&mut rng, 0.3),
            scales: Scales4::from_linear([2.0, 1.6, 0.3, 0.6]),
            opacity_logit: logit(0.85),
            appearance: random_appearance(&mut rng, &cfg, [0.6, 0.5, 0.4]),
        });
    } else if count > 1 {
        cloud.gaussians.push(Gaussian4D {
            mean: [0.0, 0.0, 7.0, 0.5],
            rotor: random_rotor(&mut rng, 0.1),
            scales: Scales4::from_linear([9.0, 8.0, 0.4, 2.0]),
            opacity_logit: logit(0.92),
            appearance: random_appearance(&mut rng, &cfg, [0.5, 0.6, 0.55]),
        });
        for _ in 1..count {
            let z = rng.random_range(2.5..4.5);
            let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.7));
            let s = [
                rng.random_range(0.30..0.45),
                rng.random_range(0.18..0.26),
                rng.random_range(0.08..0.12),
                rng.random_range(0.3..0.7),
            ];
            cloud.gaussians.push(Gaussian4D {
                mean: [
                    rng.random_range(-0.35..0.35) * z,
                    rng.random_range(-0.35..0.35) * z,
                    z,
                    rng.random_range(0.35..0.65),
                ],
                rotor: random_rotor(&mut rng, 0.4),
                scales: Scales4::from_linear(s),
                opacity_logit: logit(rng.random_range(0.3..0.75)),
                appearance: random_appearance(&mut rng, &cfg, base),
            });
        }
    }
    let n = size * size;
    let color = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.92..1.0)))
        .collect();
    GradFixture {
        name: format!("{count}-gaussian {size}x{size}"),
        cloud,
        cam,
        targets: FrameTargets {
            color,
            depth: Some(vec![50.0; n]),
            tool_mask: None,
        },
        weights: LossWeights::default(),
    }
}

impl GradFixture {
    pub fn check(&self, opts: &CheckOptions) -> Result<GradReport> {
        check_gradients(&self.name, &self.cloud, &self.cam, &self.targets, &self.weights, opts)
    }
}
