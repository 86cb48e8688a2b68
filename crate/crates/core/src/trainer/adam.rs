//! Adam with per-group learning rates.

use crate::error::{Error, Result};
use crate::field::{GaussianCloud, ParamGroup, ParamLayout};
use crate::geometry::quat_normalize;
use crate::losses::GradientBuffer;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// First and second moment estimates, one layout stride per Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub layout: ParamLayout,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let layout = cloud.layout();
        let n = layout.stride() * cloud.len();
        Self {
            layout,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.layout.stride()
    }

    /// Appends zeroed rows.
    pub fn push_rows(&mut self, count: usize) {
        let n = count * self.layout.stride();
        self.m.extend(std::iter::repeat_n(0.0, n));
        self.v.extend(std::iter::repeat_n(0.0, n));
    }

    pub fn reset_row(&mut self, i: usize) {
        let s = self.layout.stride();
        self.m[i * s..(i + 1) * s].fill(0.0);
        self.v[i * s..(i + 1) * s].fill(0.0);
    }

    /// Keeps the rows whose `keep` flag is set, preserving order.
    pub fn retain_rows(&mut self, keep: &[bool]) {
        let s = self.layout.stride();
        let filter = |buf: &[f64]| -> Vec<f64> {
            buf.chunks_exact(s)
                .zip(keep)
                .filter(|(_, &k)| k)
                .flat_map(|(row, _)| row.iter().copied())
                .collect()
        };
        self.m = filter(&self.m);
        self.v = filter(&self.v);
    }
}

/// Learning rate of each [`ParamGroup`], in [`ParamGroup::ALL`] order.
pub type GroupRates = [f64; 6];

pub fn rate_of(rates: &GroupRates, group: ParamGroup) -> f64 {
    rates[ParamGroup::ALL.iter().position(|g| *g == group).expect("known group")]
}

/// One Adam update. Entries with an exactly zero gradient only decay their
/// moments and leave the parameter unchanged. Rotors are renormalized.
pub fn step(
    cloud: &mut GaussianCloud,
    state: &mut OptimizerState,
    grads: &GradientBuffer,
    rates: &GroupRates,
) -> Result<()> {
    let layout = cloud.layout();
    let stride = layout.stride();
    if grads.data.len() != stride * cloud.len() || state.m.len() != grads.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "cloud of {} gaussians, gradients for {}, optimizer rows {}",
            cloud.len(),
            grads.len(),
            state.rows()
        )));
    }
    if let Some(index) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);
    let lr_at: Vec<f64> = (0..stride).map(|k| rate_of(rates, layout.group_of(k))).collect();

    let mut row = vec![0.0; stride];
    for (i, g) in cloud.gaussians.iter_mut().enumerate() {
        layout.write(g, &mut row);
        let base = i * stride;
        for k in 0..stride {
            let gr = grads.data[base + k];
            let m = &mut state.m[base + k];
            let v = &mut state.v[base + k];
            *m = BETA1 * *m + (1.0 - BETA1) * gr;
            *v = BETA2 * *v + (1.0 - BETA2) * gr * gr;
            if gr == 0.0 {
                continue;
            }
            let update = lr_at[k] * (*m / bc1) / ((*v / bc2).sqrt() + EPSILON);
            row[k] -= update;
            if !row[k].is_finite() {
                return Err(Error::NonFiniteUpdate { index: i });
            }
        }
        layout.read(&row, g);
        g.rotor.left = quat_normalize(g.rotor.left);
        g.rotor.right = quat_normalize(g.rotor.right);
    }
    Ok(())
}
