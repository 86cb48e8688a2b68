//! Optimization loop: per-frame backward passes, Adam updates, adaptive
//! density control and periodic validation.

pub mod adam;
pub mod densify;
pub mod init;

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{step, GroupRates, OptimizerState};
pub use densify::{densify_and_prune, DensifyParams, DensifyReport, DensifyStats};
pub use init::initialize;

use crate::appearance::AppearanceConfig;
use crate::error::{Error, Result};
use crate::field::GaussianCloud;
use crate::io::SceneDataset;
use crate::losses::{backward_full, LossBreakdown, LossWeights};
use crate::metrics::{psnr, quantize8, ssim};
use crate::render::{render_with, RenderSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Base learning rate; each group scales it by its multiplier.
    pub lr: f64,
    pub lr_position: f64,
    /// Final position multiplier reached by log-linear decay.
    pub lr_position_final: f64,
    pub lr_rotor: f64,
    pub lr_scales: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_phases: f64,
    pub densify_interval: usize,
    /// Densification starts after this many iterations.
    pub densify_from: usize,
    /// Fraction of training after which densification stops.
    pub densify_until_fraction: f64,
    pub densify_grad_threshold: f64,
    pub prune_opacity: f64,
    /// Split threshold as a fraction of the scene extent.
    pub split_scale_fraction: f64,
    pub max_gaussians: usize,
    /// Iterations between SH degree increments.
    pub sh_unlock_interval: usize,
    /// Iterations between validation passes (0 disables them until the end).
    pub eval_interval: usize,
    pub seed: u64,
    pub init_points: usize,
    pub init_frames: usize,
    pub init_opacity: f64,
    /// Initial spatial scale relative to the sampling footprint.
    pub init_scale: f64,
    pub init_time_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr: 1.6e-3,
            lr_position: 1.0,
            lr_position_final: 0.01,
            lr_rotor: 0.1,
            lr_scales: 0.5,
            lr_opacity: 5.0,
            lr_sh: 0.05,
            lr_phases: 0.05,
            densify_interval: 100,
            densify_from: 100,
            densify_until_fraction: 0.5,
            densify_grad_threshold: 2e-4,
            prune_opacity: 0.005,
            split_scale_fraction: 0.01,
            max_gaussians: 50_000,
            sh_unlock_interval: 1000,
            eval_interval: 500,
            seed: 0,
            init_points: 2000,
            init_frames: 32,
            init_opacity: 0.1,
            init_scale: 0.5,
            init_time_scale: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("lr_position_final", self.lr_position_final),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("prune_opacity", self.prune_opacity),
            ("split_scale_fraction", self.split_scale_fraction),
            ("init_opacity", self.init_opacity),
            ("init_scale", self.init_scale),
            ("init_time_scale", self.init_time_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("train.{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("lr_position", self.lr_position),
            ("lr_rotor", self.lr_rotor),
            ("lr_scales", self.lr_scales),
            ("lr_opacity", self.lr_opacity),
            ("lr_sh", self.lr_sh),
            ("lr_phases", self.lr_phases),
            ("densify_until_fraction", self.densify_until_fraction),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("train.{name} must be nonnegative, got {v}")));
            }
        }
        if !(self.init_opacity < 1.0) {
            return Err(Error::InvalidConfig("train.init_opacity must be below 1".into()));
        }
        if self.densify_interval == 0 || self.sh_unlock_interval == 0 {
            return Err(Error::InvalidConfig("train intervals must be positive".into()));
        }
        Ok(())
    }

    /// Learning rates at 1-based `iteration`.
    pub fn rates(&self, iteration: usize) -> GroupRates {
        let frac = if self.iterations > 1 {
            (iteration.saturating_sub(1)) as f64 / (self.iterations - 1) as f64
        } else {
            0.0
        };
        let decay = self.lr_position_final.powf(frac.min(1.0));
        [
            self.lr * self.lr_position * decay,
            self.lr * self.lr_rotor,
            self.lr * self.lr_scales,
            self.lr * self.lr_opacity,
            self.lr * self.lr_sh,
            self.lr * self.lr_phases,
        ]
    }

    fn densify_active(&self, iteration: usize) -> bool {
        iteration > self.densify_from
            && iteration % self.densify_interval == 0
            && (iteration as f64) <= self.densify_until_fraction * self.iterations as f64
    }
}

/// Validation metrics for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameEval {
    pub index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameEval>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders every frame and scores it against its target after quantizing
/// both to 8 bits. Tool-masked pixels are excluded.
pub fn evaluate(cloud: &GaussianCloud, dataset: &SceneDataset, settings: &RenderSettings) -> EvalReport {
    let frames: Vec<FrameEval> = dataset
        .frames
        .iter()
        .map(|f| {
            let out = render_with(cloud, &f.camera, settings);
            let a = quantize8(&out.color);
            let mut b = quantize8(&f.targets.color);
            let valid: Option<Vec<bool>> = f.targets.tool_mask.as_ref().map(|m| m.iter().map(|t| !t).collect());
            // Tool pixels copy the render so they cannot leak into SSIM windows.
            if let Some(v) = &valid {
                for i in 0..b.len() {
                    if !v[i] {
                        b[i] = a[i];
                    }
                }
            }
            FrameEval {
                index: f.index,
                psnr: psnr(&a, &b, valid.as_deref()),
                ssim: ssim(&a, &b, f.camera.width, f.camera.height, valid.as_deref()),
            }
        })
        .collect();
    let n = frames.len().max(1) as f64;
    EvalReport {
        mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub frame: usize,
    pub loss: LossBreakdown,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub gaussians: usize,
}

/// Per-iteration training log. Contains no timing so that identical runs
/// produce identical logs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,frame,loss,l1,ssim,depth,enac,val_psnr,val_ssim,gaussians\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.frame,
                r.loss.total,
                r.loss.l1,
                r.loss.ssim,
                r.loss.depth,
                r.loss.enac,
                opt(r.val_psnr),
                opt(r.val_ssim),
                r.gaussians
            );
        }
        s
    }

    /// Last row carrying validation metrics.
    pub fn last_eval(&self) -> Option<&MetricsRow> {
        self.rows.iter().rev().find(|r| r.val_psnr.is_some())
    }
}

/// Wall-clock milliseconds spent in each iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimingLog {
    pub wall_ms: Vec<f64>,
}

impl TimingLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,wall_ms\n");
        for (i, ms) in self.wall_ms.iter().enumerate() {
            let _ = writeln!(s, "{},{ms:.3}", i + 1);
        }
        s
    }
}

pub struct TrainOutput {
    pub cloud: GaussianCloud,
    pub log: MetricsLog,
    pub timing: TimingLog,
}

/// Passed to the progress callback after every iteration.
pub struct Progress<'a> {
    pub iteration: usize,
    pub cloud: &'a GaussianCloud,
    pub row: &'a MetricsRow,
    pub densify: Option<DensifyReport>,
}

/// Initializes a cloud from `train` and optimizes it.
pub fn train(
    train_set: &SceneDataset,
    val_set: &SceneDataset,
    appearance: AppearanceConfig,
    weights: &LossWeights,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&Progress<'_>),
) -> Result<TrainOutput> {
    if train_set.is_empty() {
        return Err(Error::Dataset("training split has no frames".into()));
    }
    appearance.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cloud = initialize(train_set, appearance, config, &mut rng);
    optimize(cloud, train_set, val_set, weights, config, &mut rng, progress)
}

/// Optimizes an existing cloud.
pub fn train_from(
    cloud: GaussianCloud,
    train_set: &SceneDataset,
    val_set: &SceneDataset,
    weights: &LossWeights,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&Progress<'_>),
) -> Result<TrainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    optimize(cloud, train_set, val_set, weights, config, &mut rng, progress)
}

fn optimize(
    mut cloud: GaussianCloud,
    train_set: &SceneDataset,
    val_set: &SceneDataset,
    weights: &LossWeights,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    progress: &mut dyn FnMut(&Progress<'_>),
) -> Result<TrainOutput> {
    config.validate()?;
    weights.validate()?;
    cloud.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("training split has no frames".into()));
    }
    let mut state = OptimizerState::new(&cloud);
    let mut stats = DensifyStats::new(cloud.len());
    let mut log = MetricsLog::default();
    let mut timing = TimingLog::default();
    let densify_params = DensifyParams {
        grad_threshold: config.densify_grad_threshold,
        prune_opacity: config.prune_opacity,
        split_scale: config.split_scale_fraction * train_set.extent(),
        max_gaussians: config.max_gaussians,
    };
    let max_degree = cloud.appearance.sh_degree;

    for iteration in 1..=config.iterations {
        let start = Instant::now();
        let degree = ((iteration - 1) / config.sh_unlock_interval).min(max_degree);
        let settings = RenderSettings {
            sh_degree: Some(degree),
            ..RenderSettings::default()
        };
        let frame_pos = rng.random_range(0..train_set.len());
        let frame = &train_set.frames[frame_pos];
        let out = backward_full(&cloud, &frame.camera, &frame.targets, weights, &settings)?;
        stats.record(&out.screen_grad, &out.visible);
        step(&mut cloud, &mut state, &out.grads, &config.rates(iteration))?;

        let mut densify = None;
        if config.densify_active(iteration) {
            densify = Some(densify_and_prune(&mut cloud, &mut state, &stats, &densify_params, rng));
            stats = DensifyStats::new(cloud.len());
        }

        let eval_now = iteration == config.iterations
            || (config.eval_interval > 0 && iteration % config.eval_interval == 0);
        let (mut val_psnr, mut val_ssim) = (None, None);
        if eval_now && !val_set.is_empty() {
            let full = RenderSettings {
                sh_degree: Some(degree),
                ..RenderSettings::default()
            };
            let report = evaluate(&cloud, val_set, &full);
            val_psnr = Some(report.mean_psnr);
            val_ssim = Some(report.mean_ssim);
        }
        let row = MetricsRow {
            iteration,
            frame: frame.index,
            loss: out.loss,
            val_psnr,
            val_ssim,
            gaussians: cloud.len(),
        };
        log.rows.push(row);
        timing.wall_ms.push(start.elapsed().as_secs_f64() * 1e3);
        progress(&Progress {
            iteration,
            cloud: &cloud,
            row: &row,
            densify,
        });
    }
    Ok(TrainOutput { cloud, log, timing })
}
