//! Adaptive density control: clone small high-gradient Gaussians, split
//! large ones, prune transparent ones.

use nalgebra::Vector4;
use rand::Rng;
use rand_distr::StandardNormal;

use super::adam::OptimizerState;
use crate::field::GaussianCloud;
use crate::geometry::rotor_to_matrix;

/// Scale divisor applied to split children.
pub const SPLIT_FACTOR: f64 = 1.6;

/// Screen-space gradient statistics accumulated between densification steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    pub fn record(&mut self, screen_grad: &[f64], visible: &[bool]) {
        for i in 0..self.count.len() {
            if visible[i] {
                self.grad_accum[i] += screen_grad[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / f64::from(self.count[i])
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    /// Mean screen-space gradient above which a Gaussian is densified.
    pub grad_threshold: f64,
    /// Gaussians with opacity below this are removed.
    pub prune_opacity: f64,
    /// Spatial scale separating cloning (below) from splitting (at or above).
    pub split_scale: f64,
    /// Densification stops adding Gaussians at this count.
    pub max_gaussians: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Applies one densify-and-prune pass, keeping `state` rows in lockstep with
/// the cloud. New rows start with zero moments.
pub fn densify_and_prune<R: Rng>(
    cloud: &mut GaussianCloud,
    state: &mut OptimizerState,
    stats: &DensifyStats,
    params: &DensifyParams,
    rng: &mut R,
) -> DensifyReport {
    let n = cloud.len();
    let mut report = DensifyReport::default();
    let mut keep = vec![true; n];
    let spread = (1.0 - 1.0 / (SPLIT_FACTOR * SPLIT_FACTOR)).sqrt();
    for i in 0..n {
        if stats.mean(i) <= params.grad_threshold {
            continue;
        }
        let parent = cloud.gaussians[i].clone();
        if parent.max_spatial_scale() < params.split_scale {
            if cloud.len() + 1 > params.max_gaussians {
                continue;
            }
            cloud.gaussians.push(parent);
            keep.push(true);
            report.cloned += 1;
        } else {
            if cloud.len() + 1 > params.max_gaussians {
                continue;
            }
            let Ok(r4) = rotor_to_matrix(&parent.rotor) else {
                continue;
            };
            let s = parent.scales.values();
            for _ in 0..2 {
                let z: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let local = Vector4::new(spread * s[0] * z[0], spread * s[1] * z[1], spread * s[2] * z[2], 0.0);
                let offset = r4 * local;
                let mut child = parent.clone();
                for k in 0..4 {
                    child.mean[k] += offset[k];
                }
                for k in 0..3 {
                    child.scales.log_s[k] -= SPLIT_FACTOR.ln();
                }
                cloud.gaussians.push(child);
                keep.push(true);
            }
            keep[i] = false;
            report.split += 1;
        }
    }
    let added = cloud.len() - n;
    state.push_rows(added);
    for (i, g) in cloud.gaussians.iter().enumerate() {
        if keep[i] && g.opacity() < params.prune_opacity {
            keep[i] = false;
            report.pruned += 1;
        }
    }
    let mut it = keep.iter();
    cloud.gaussians.retain(|_| *it.next().expect("flag per gaussian"));
    state.retain_rows(&keep);
    report
}
