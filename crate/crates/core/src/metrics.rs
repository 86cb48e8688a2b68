//! Image quality metrics on `[0, 1]` RGB images.

pub use crate::losses::ssim::ssim;

/// PSNR values are capped here (identical images).
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB over pixels where `valid` holds, with a
/// peak value of 1.
pub fn psnr(a: &[[f64; 3]], b: &[[f64; 3]], valid: Option<&[bool]>) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.len() {
        if valid.is_none_or(|v| v[i]) {
            for c in 0..3 {
                let d = a[i][c] - b[i][c];
                sum += d * d;
            }
            count += 3;
        }
    }
    if count == 0 || sum == 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * (sum / count as f64).log10()).min(PSNR_CAP)
}

/// Rounds to the nearest 8-bit level and maps back to `[0, 1]`.
pub fn quantize8(img: &[[f64; 3]]) -> Vec<[f64; 3]> {
    img.iter()
        .map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0))
        .collect()
}
