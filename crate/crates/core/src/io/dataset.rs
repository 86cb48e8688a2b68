//! Posed, timestamped RGB-D frame sequences.
//!
//! On-disk layout:
//!
//! ```text
//! images/000000.png       RGB frames
//! depth/000000.png        optional, 16-bit millimeters (0 = invalid)
//! depth/000000.pfm        optional alternative, float meters
//! masks/000000.png        optional, nonzero = tool (excluded from losses)
//! poses.txt               per frame: 12 world-to-camera values [R|t] row-major, then fx fy cx cy
//! times.txt               per frame: one timestamp, strictly increasing
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::image::{read_depth_png, read_mask, read_pfm, read_rgb, write_mask, write_pfm, write_rgb};
use crate::error::{Error, Result};
use crate::losses::FrameTargets;
use crate::render::camera::{Camera, DEFAULT_FAR, DEFAULT_NEAR};

/// Default number of training frames per validation frame.
pub const DEFAULT_SPLIT_RATIO: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    All,
    Train,
    Val,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Split::All),
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::InvalidConfig(format!("unknown split `{s}` (expected all, train or val)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// `true` when frame `index` belongs to the validation split: every
/// `(ratio + 1)`-th frame, starting at `ratio`.
pub fn is_validation(index: usize, ratio: usize) -> bool {
    ratio > 0 && index % (ratio + 1) == ratio
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Position in the full sequence.
    pub index: usize,
    /// Intrinsics, pose and normalized timestamp.
    pub camera: Camera,
    pub targets: FrameTargets,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub frames: Vec<Frame>,
    pub width: usize,
    pub height: usize,
    /// Axis-aligned scene bounds `[min, max]`.
    pub bbox: [[f64; 3]; 2],
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn has_depth(&self) -> bool {
        self.frames.iter().any(|f| f.targets.depth.is_some())
    }

    pub fn has_masks(&self) -> bool {
        self.frames.iter().any(|f| f.targets.tool_mask.is_some())
    }

    /// Length of the bounding-box diagonal.
    pub fn extent(&self) -> f64 {
        let [lo, hi] = self.bbox;
        (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn select(&self, split: Split, ratio: usize) -> SceneDataset {
        let frames = self
            .frames
            .iter()
            .filter(|f| match split {
                Split::All => true,
                Split::Train => !is_validation(f.index, ratio),
                Split::Val => is_validation(f.index, ratio),
            })
            .cloned()
            .collect();
        SceneDataset {
            frames,
            width: self.width,
            height: self.height,
            bbox: self.bbox,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.frames.windows(2) {
            if !(w[1].camera.time > w[0].camera.time) {
                return Err(Error::Dataset(format!(
                    "timestamps must be strictly increasing (frame {} -> {})",
                    w[0].index, w[1].index
                )));
            }
        }
        for f in &self.frames {
            f.camera.validate()?;
            if f.camera.width != self.width || f.camera.height != self.height {
                return Err(Error::Dataset(format!("frame {} has mismatched dimensions", f.index)));
            }
        }
        Ok(())
    }
}

/// Bounding box of back-projected depth, or of the camera centers padded by
/// one unit when no depth is present.
pub fn compute_bbox(frames: &[Frame]) -> [[f64; 3]; 2] {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut grow = |p: Vector3<f64>| {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    };
    let mut any_depth = false;
    for f in frames {
        let Some(depth) = &f.targets.depth else { continue };
        let cam = &f.camera;
        for v in (0..cam.height).step_by(2) {
            for u in (0..cam.width).step_by(2) {
                let d = depth[v * cam.width + u];
                if d > 0.0 {
                    any_depth = true;
                    let p = cam.pixel_ray(u, v) * d;
                    grow(cam.rotation.transpose() * (p - cam.translation));
                }
            }
        }
    }
    if !any_depth {
        for f in frames {
            let c = f.camera.center();
            grow(c - Vector3::repeat(1.0));
            grow(c + Vector3::repeat(1.0));
        }
    }
    if frames.is_empty() {
        return [[-1.0; 3], [1.0; 3]];
    }
    [lo, hi]
}

fn parse_rows(path: &Path, expected: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).map(str::parse).collect();
        let vals = vals.map_err(|e| Error::file(path, format!("line {}: {e}", line_no + 1)))?;
        if vals.len() != expected || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::file(
                path,
                format!("line {}: expected {expected} finite values, found {}", line_no + 1, vals.len()),
            ));
        }
        rows.push(vals);
    }
    Ok(rows)
}

fn frame_name(i: usize) -> String {
    format!("{i:06}")
}

/// Loads the frames of `split` from a dataset directory.
pub fn load_dataset(path: &Path, split: Split, ratio: usize) -> Result<SceneDataset> {
    if !path.is_dir() {
        return Err(Error::file(path, "dataset directory not found"));
    }
    let poses = parse_rows(&path.join("poses.txt"), 16)?;
    let times_path = path.join("times.txt");
    let times: Vec<f64> = parse_rows(&times_path, 1)?.into_iter().map(|r| r[0]).collect();
    if poses.is_empty() {
        return Err(Error::file(path.join("poses.txt"), "no poses"));
    }
    if times.len() != poses.len() {
        return Err(Error::file(
            &times_path,
            format!("{} timestamps for {} poses", times.len(), poses.len()),
        ));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::file(&times_path, "timestamps must be strictly increasing"));
    }
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let span = t1 - t0;

    let indices: Vec<usize> = (0..poses.len())
        .filter(|&i| match split {
            Split::All => true,
            Split::Train => !is_validation(i, ratio),
            Split::Val => is_validation(i, ratio),
        })
        .collect();

    let frames: Vec<Frame> = indices
        .par_iter()
        .map(|&i| {
            let name = frame_name(i);
            let img_path = path.join("images").join(format!("{name}.png"));
            let img = read_rgb(&img_path)?;
            let p = &poses[i];
            let camera = Camera {
                fx: p[12],
                fy: p[13],
                cx: p[14],
                cy: p[15],
                width: img.width,
                height: img.height,
                rotation: Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]),
                translation: Vector3::new(p[3], p[7], p[11]),
                near: DEFAULT_NEAR,
                far: DEFAULT_FAR,
                time: if span > 0.0 { (times[i] - t0) / span } else { 0.0 },
            };
            camera
                .validate()
                .map_err(|e| Error::file(path.join("poses.txt"), format!("frame {i}: {e}")))?;
            let check = |w: usize, h: usize, p: &Path| -> Result<()> {
                if (w, h) != (img.width, img.height) {
                    return Err(Error::file(p, "dimensions differ from the color image"));
                }
                Ok(())
            };
            let depth_png = path.join("depth").join(format!("{name}.png"));
            let depth_pfm = path.join("depth").join(format!("{name}.pfm"));
            let depth = if depth_pfm.is_file() {
                let d = read_pfm(&depth_pfm)?;
                check(d.width, d.height, &depth_pfm)?;
                Some(d.pixels.into_iter().map(|v| if v.is_finite() && v > 0.0 { v } else { 0.0 }).collect())
            } else if depth_png.is_file() {
                let d = read_depth_png(&depth_png)?;
                check(d.width, d.height, &depth_png)?;
                Some(d.pixels)
            } else {
                None
            };
            let mask_path = path.join("masks").join(format!("{name}.png"));
            let tool_mask = if mask_path.is_file() {
                let m = read_mask(&mask_path)?;
                check(m.width, m.height, &mask_path)?;
                Some(m.pixels)
            } else {
                None
            };
            Ok(Frame {
                index: i,
                camera,
                targets: FrameTargets {
                    color: img.pixels,
                    depth,
                    tool_mask,
                },
            })
        })
        .collect::<Result<_>>()?;

    let (width, height) = frames
        .first()
        .map(|f| (f.camera.width, f.camera.height))
        .unwrap_or((0, 0));
    let dataset = SceneDataset {
        bbox: compute_bbox(&frames),
        frames,
        width,
        height,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes a dataset in the layout read by [`load_dataset`]. Colors are
/// quantized to 8 bits and depth is stored as PFM.
pub fn save_dataset(dataset: &SceneDataset, path: &Path) -> Result<()> {
    for sub in ["images", "depth", "masks"] {
        std::fs::create_dir_all(path.join(sub)).map_err(|e| Error::file(path.join(sub), e.to_string()))?;
    }
    let mut poses = String::new();
    let mut times = String::new();
    for (k, f) in dataset.frames.iter().enumerate() {
        let name = frame_name(k);
        let c = &f.camera;
        write_rgb(&path.join("images").join(format!("{name}.png")), c.width, c.height, &f.targets.color)?;
        if let Some(d) = &f.targets.depth {
            write_pfm(&path.join("depth").join(format!("{name}.pfm")), c.width, c.height, d)?;
        }
        if let Some(m) = &f.targets.tool_mask {
            write_mask(&path.join("masks").join(format!("{name}.png")), c.width, c.height, m)?;
        }
        let r = &c.rotation;
        let t = &c.translation;
        let vals = [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            c.fx, c.fy, c.cx, c.cy,
        ];
        let line: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
        poses.push_str(&line.join(" "));
        poses.push('\n');
        times.push_str(&format!("{:e}\n", c.time));
    }
    std::fs::write(path.join("poses.txt"), poses).map_err(|e| Error::file(path.join("poses.txt"), e.to_string()))?;
    std::fs::write(path.join("times.txt"), times).map_err(|e| Error::file(path.join("times.txt"), e.to_string()))?;
    Ok(())
}
