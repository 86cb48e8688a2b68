//! Subcommand implementations. Each returns the process exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use sp4d::field::ParamGroup;
use sp4d::io::image::{write_gray, write_normals, write_pfm, write_rgb};
use sp4d::io::synthetic::orbit_camera;
use sp4d::io::{load_checkpoint, load_dataset, make_synthetic, save_checkpoint, save_dataset, Split};
use sp4d::losses::{gradient_fixture, CheckOptions};
use sp4d::render::{render_with, Camera};
use sp4d::trainer::{evaluate, train, EvalReport};

use crate::camera_path;
use crate::config::Config;

/// Renders repeated for the FPS figure, at minimum.
pub const FPS_MIN_RENDERS: usize = 30;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.sp4d")
}

pub const FINAL_CHECKPOINT: &str = "final.sp4d";

pub fn train_cmd(config: &Config, json: bool) -> Result<u8> {
    let data = &config.data.path;
    let train_set = load_dataset(data, Split::Train, config.data.split_ratio)
        .with_context(|| format!("loading dataset {}", data.display()))?;
    let val_set = load_dataset(data, Split::Val, config.data.split_ratio)
        .with_context(|| format!("loading dataset {}", data.display()))?;
    let out = &config.output.dir;
    create_dir(out)?;
    config.write_resolved(out)?;

    let eval_interval = config.train.eval_interval;
    let mut save_error = None;
    let start = Instant::now();
    let result = train(
        &train_set,
        &val_set,
        config.appearance,
        &config.loss,
        &config.train,
        &mut |p| {
            let row = p.row;
            if let (Some(psnr), Some(ssim)) = (row.val_psnr, row.val_ssim) {
                if !json {
                    println!(
                        "iter {:>6}  loss {:.5}  val_psnr {:.3}  val_ssim {:.4}  gaussians {}",
                        p.iteration, row.loss.total, psnr, ssim, row.gaussians
                    );
                }
            }
            if eval_interval > 0 && p.iteration % eval_interval == 0 && save_error.is_none() {
                let path = out.join(checkpoint_name(p.iteration));
                if let Err(e) = save_checkpoint(p.cloud, p.iteration as u64, &path) {
                    save_error = Some(e);
                }
            }
        },
    )?;
    if let Some(e) = save_error {
        return Err(e.into());
    }
    let final_path = out.join(FINAL_CHECKPOINT);
    save_checkpoint(&result.cloud, config.train.iterations as u64, &final_path)?;
    write_text(&out.join("metrics.csv"), &result.log.to_csv())?;
    write_text(&out.join("timing.csv"), &result.timing.to_csv())?;

    let last = result.log.last_eval();
    let summary = json!({
        "iterations": config.train.iterations,
        "gaussians": result.cloud.len(),
        "checkpoint": final_path,
        "val_psnr": last.and_then(|r| r.val_psnr),
        "val_ssim": last.and_then(|r| r.val_ssim),
        "seconds": start.elapsed().as_secs_f64(),
    });
    if json {
        println!("{summary}");
    } else {
        println!(
            "trained {} iterations, {} gaussians, wrote {}",
            config.train.iterations,
            result.cloud.len(),
            final_path.display()
        );
    }
    Ok(0)
}

#[derive(Serialize)]
struct RenderSummary {
    views: usize,
    width: usize,
    height: usize,
    gaussians: usize,
    renders: usize,
    seconds: f64,
    fps: f64,
    out: PathBuf,
}

pub fn render_cmd(
    config: &Config,
    checkpoint: &Path,
    cameras: &Path,
    out: Option<&Path>,
    time_range: Option<(f64, f64)>,
    json: bool,
) -> Result<u8> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut cams = camera_path::read(cameras)?;
    if let Some((a, b)) = time_range {
        camera_path::retime(&mut cams, a, b);
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| config.output.dir.join("render"));
    for sub in ["color", "depth", "normal", "alpha"] {
        create_dir(&out.join(sub))?;
    }
    let settings = config.render.settings();
    let mut seconds = 0.0;
    for (i, cam) in cams.iter().enumerate() {
        let t0 = Instant::now();
        let buf = render_with(&ck.cloud, cam, &settings);
        seconds += t0.elapsed().as_secs_f64();
        let (w, h) = (cam.width, cam.height);
        let name = format!("{i:06}");
        write_rgb(&out.join("color").join(format!("{name}.png")), w, h, &buf.color)?;
        write_pfm(&out.join("depth").join(format!("{name}.pfm")), w, h, &buf.depth)?;
        write_normals(&out.join("normal").join(format!("{name}.png")), w, h, &buf.normal)?;
        write_gray(&out.join("alpha").join(format!("{name}.png")), w, h, &buf.alpha)?;
    }
    let mut renders = cams.len();
    while renders < FPS_MIN_RENDERS {
        let cam = &cams[renders % cams.len()];
        let t0 = Instant::now();
        std::hint::black_box(render_with(&ck.cloud, cam, &settings));
        seconds += t0.elapsed().as_secs_f64();
        renders += 1;
    }
    let summary = RenderSummary {
        views: cams.len(),
        width: cams[0].width,
        height: cams[0].height,
        gaussians: ck.cloud.len(),
        renders,
        seconds,
        fps: renders as f64 / seconds.max(f64::MIN_POSITIVE),
        out,
    };
    if json {
        println!("{}", serde_json::to_string(&summary)?);
    } else {
        println!(
            "rendered {} views to {}\n{:.2} FPS ({}x{}, {} gaussians, render time only, {} renders)",
            summary.views,
            summary.out.display(),
            summary.fps,
            summary.width,
            summary.height,
            summary.gaussians,
            summary.renders
        );
    }
    Ok(0)
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut s = String::from("frame,psnr,ssim\n");
    for f in &report.frames {
        s.push_str(&format!("{},{},{}\n", f.index, f.psnr, f.ssim));
    }
    s.push_str(&format!("mean,{},{}\n", report.mean_psnr, report.mean_ssim));
    s
}

pub fn eval_cmd(config: &Config, checkpoint: &Path, split: Split, csv: Option<&Path>, json: bool) -> Result<u8> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let data = &config.data.path;
    let dataset = load_dataset(data, split, config.data.split_ratio)
        .with_context(|| format!("loading dataset {}", data.display()))?;
    if dataset.is_empty() {
        bail!("split `{split}` of {} has no frames", data.display());
    }
    let report = evaluate(&ck.cloud, &dataset, &config.render.settings());
    let csv_path = match csv {
        Some(p) => p.to_path_buf(),
        None => {
            create_dir(&config.output.dir)?;
            config.output.dir.join(format!("eval_{split}.csv"))
        }
    };
    write_text(&csv_path, &eval_csv(&report))?;
    if json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!("frame      psnr     ssim");
        for f in &report.frames {
            println!("{:>5}  {:>8.3}  {:.5}", f.index, f.psnr, f.ssim);
        }
        println!(" mean  {:>8.3}  {:.5}", report.mean_psnr, report.mean_ssim);
    }
    Ok(0)
}

pub fn parse_group(name: &str) -> Result<ParamGroup> {
    ParamGroup::ALL
        .into_iter()
        .find(|g| g.name() == name)
        .with_context(|| {
            let names: Vec<&str> = ParamGroup::ALL.iter().map(|g| g.name()).collect();
            format!("unknown parameter group `{name}` (expected one of {})", names.join(", "))
        })
}

/// Built-in gradient fixtures: Gaussian count, image size, seed.
pub const GRAD_FIXTURES: [(usize, usize, u64); 2] = [(1, 16, 3), (20, 16, 7)];

pub fn check_grad_cmd(inject_fault: Option<&str>, json: bool) -> Result<u8> {
    let opts = CheckOptions {
        inject_fault: inject_fault.map(parse_group).transpose()?,
        ..CheckOptions::default()
    };
    let start = Instant::now();
    let mut reports = Vec::new();
    for (count, size, seed) in GRAD_FIXTURES {
        reports.push(gradient_fixture(count, size, seed).check(&opts)?);
    }
    let seconds = start.elapsed().as_secs_f64();
    let passed = reports.iter().all(|r| r.passed);
    let mut failed: Vec<&str> = reports.iter().flat_map(|r| r.failed_groups()).map(|g| g.name()).collect();
    failed.sort_unstable();
    failed.dedup();
    if json {
        println!(
            "{}",
            json!({ "passed": passed, "failed_groups": failed, "seconds": seconds, "reports": reports })
        );
    } else {
        for r in &reports {
            print!("{r}");
        }
        if passed {
            println!("gradient check passed in {seconds:.1} s");
        } else {
            println!("gradient check FAILED for groups: {}", failed.join(", "));
        }
    }
    Ok(if passed { 0 } else { 1 })
}

pub fn make_synthetic_cmd(config: &Config, out: Option<&Path>, json: bool) -> Result<u8> {
    let out = out.unwrap_or(&config.data.path);
    let scene = make_synthetic(&config.synthetic)?;
    create_dir(out)?;
    save_dataset(&scene.dataset, out)?;
    let gt = out.join("ground_truth.sp4d");
    save_checkpoint(&scene.cloud, 0, &gt)?;
    let cams: Vec<Camera> = (0..config.synthetic.frames).map(|i| orbit_camera(&config.synthetic, i)).collect();
    write_text(&out.join("cameras.txt"), &camera_path::format(&cams))?;
    config.write_resolved(out)?;
    if json {
        println!(
            "{}",
            json!({ "out": out, "frames": scene.dataset.len(), "gaussians": scene.cloud.len(), "ground_truth": gt })
        );
    } else {
        println!(
            "wrote {} frames ({} motion, {} gaussians) to {}",
            scene.dataset.len(),
            config.synthetic.motion,
            scene.cloud.len(),
            out.display()
        );
    }
    Ok(0)
}
