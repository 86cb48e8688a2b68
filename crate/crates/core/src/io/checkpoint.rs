//! Binary checkpoints.
//!
//! Layout (little endian): magic `SP4D`, `u32` version (`major << 16 | minor`),
//! `u64` Gaussian count, `u32` SH degree, `u32` temporal order, `f64` period,
//! `u64` training iteration, fixed-stride `f64` records in
//! [`ParamLayout`](crate::field::ParamLayout) order, then a CRC32 of every
//! preceding byte.

use std::path::Path;

use crate::appearance::AppearanceConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::field::{Gaussian4D, GaussianCloud};
use crate::geometry::{Rotor4, Scales4};

pub const MAGIC: [u8; 4] = *b"SP4D";
pub const VERSION_MAJOR: u16 = 1;
pub const VERSION_MINOR: u16 = 0;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub cloud: GaussianCloud,
    pub iteration: u64,
}

pub fn encode_checkpoint(cloud: &GaussianCloud, iteration: u64) -> Vec<u8> {
    let layout = cloud.layout();
    let stride = layout.stride();
    let mut out = Vec::with_capacity(HEADER_LEN + cloud.len() * stride * 8 + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&((u32::from(VERSION_MAJOR) << 16) | u32::from(VERSION_MINOR)).to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    out.extend_from_slice(&(cloud.appearance.sh_degree as u32).to_le_bytes());
    out.extend_from_slice(&(cloud.appearance.temporal_order as u32).to_le_bytes());
    out.extend_from_slice(&cloud.appearance.period.to_le_bytes());
    out.extend_from_slice(&iteration.to_le_bytes());
    let mut row = vec![0.0; stride];
    for g in &cloud.gaussians {
        layout.write(g, &mut row);
        for v in &row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> [u8; N] {
    let v: [u8; N] = bytes[*at..*at + N].try_into().expect("length checked");
    *at += N;
    v
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated(format!("{} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut at = 4;
    let version = u32::from_le_bytes(take(bytes, &mut at));
    let (major, minor) = ((version >> 16) as u16, (version & 0xffff) as u16);
    if major > VERSION_MAJOR {
        return Err(CheckpointError::UnsupportedVersion {
            found_major: major,
            found_minor: minor,
            supported_major: VERSION_MAJOR,
        });
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(CheckpointError::Truncated(format!("{} bytes", bytes.len())));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let count = u64::from_le_bytes(take(bytes, &mut at));
    let sh_degree = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let temporal_order = u32::from_le_bytes(take(bytes, &mut at)) as usize;
    let period = f64::from_le_bytes(take(bytes, &mut at));
    let iteration = u64::from_le_bytes(take(bytes, &mut at));
    let appearance = AppearanceConfig {
        sh_degree,
        temporal_order,
        period,
    };
    appearance
        .validate()
        .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
    let layout = crate::field::ParamLayout::new(&appearance);
    let stride = layout.stride();
    let expected = (count as u128) * (stride as u128) * 8 + HEADER_LEN as u128;
    if expected != body.len() as u128 {
        return Err(CheckpointError::Malformed(format!(
            "{count} records need {expected} bytes, found {}",
            body.len()
        )));
    }

    let mut cloud = GaussianCloud::new(appearance);
    cloud.gaussians.reserve(count as usize);
    let mut row = vec![0.0; stride];
    for _ in 0..count {
        for v in row.iter_mut() {
            *v = f64::from_le_bytes(take(bytes, &mut at));
        }
        let mut g = Gaussian4D {
            mean: [0.0; 4],
            rotor: Rotor4::IDENTITY,
            scales: Scales4::from_log([0.0; 4]),
            opacity_logit: 0.0,
            appearance: appearance.zeros(),
        };
        layout.read(&row, &mut g);
        cloud.gaussians.push(g);
    }
    Ok(Checkpoint { cloud, iteration })
}

pub fn save_checkpoint(cloud: &GaussianCloud, iteration: u64, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cloud, iteration))
        .map_err(|e| Error::file(path, e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e.to_string()))?;
    Ok(decode_checkpoint(&bytes)?)
}
