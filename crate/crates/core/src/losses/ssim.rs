//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5, zero padding) and its
//! gradient with respect to the first image.

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same"-size convolution with zero padding.
fn blur(img: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * img[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

struct Moments {
    mx: Vec<f64>,
    my: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

fn moments(x: &[f64], y: &[f64], w: usize, h: usize) -> Moments {
    let mx = blur(x, w, h);
    let my = blur(y, w, h);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = blur(&xx, w, h);
    let eyy = blur(&yy, w, h);
    let exy = blur(&xy, w, h);
    let n = w * h;
    Moments {
        sxx: (0..n).map(|i| exx[i] - mx[i] * mx[i]).collect(),
        syy: (0..n).map(|i| eyy[i] - my[i] * my[i]).collect(),
        sxy: (0..n).map(|i| exy[i] - mx[i] * my[i]).collect(),
        mx,
        my,
    }
}

/// Per-pixel SSIM of one channel.
pub fn ssim_map(x: &[f64], y: &[f64], w: usize, h: usize) -> Vec<f64> {
    let m = moments(x, y, w, h);
    (0..w * h)
        .map(|i| {
            let a1 = 2.0 * m.mx[i] * m.my[i] + SSIM_C1;
            let a2 = 2.0 * m.sxy[i] + SSIM_C2;
            let b1 = m.mx[i] * m.mx[i] + m.my[i] * m.my[i] + SSIM_C1;
            let b2 = m.sxx[i] + m.syy[i] + SSIM_C2;
            (a1 * a2) / (b1 * b2)
        })
        .collect()
}

/// Given `upstream[p] = dL/dS(p)`, returns `dL/dx` for one channel.
pub fn ssim_map_backward(x: &[f64], y: &[f64], w: usize, h: usize, upstream: &[f64]) -> Vec<f64> {
    let m = moments(x, y, w, h);
    let n = w * h;
    let mut g_mx = vec![0.0; n];
    let mut g_exx = vec![0.0; n];
    let mut g_exy = vec![0.0; n];
    for i in 0..n {
        if upstream[i] == 0.0 {
            continue;
        }
        let (mx, my) = (m.mx[i], m.my[i]);
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * m.sxy[i] + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = m.sxx[i] + m.syy[i] + SSIM_C2;
        let s = (a1 * a2) / (b1 * b2);
        g_mx[i] = upstream[i] * s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
        g_exx[i] = upstream[i] * (-s / b2);
        g_exy[i] = upstream[i] * (2.0 * s / a2);
    }
    let b_mx = blur(&g_mx, w, h);
    let b_exx = blur(&g_exx, w, h);
    let b_exy = blur(&g_exy, w, h);
    (0..n)
        .map(|i| b_mx[i] + 2.0 * x[i] * b_exx[i] + y[i] * b_exy[i])
        .collect()
}

/// Splits an RGB image into three planar channels.
pub(crate) fn planes(img: &[[f64; 3]]) -> [Vec<f64>; 3] {
    std::array::from_fn(|c| img.iter().map(|p| p[c]).collect())
}

/// Mean SSIM over the three channels and over pixels where `valid` holds
/// (all pixels when `None`). Returns 1 when no pixel is valid.
pub fn ssim(x: &[[f64; 3]], y: &[[f64; 3]], w: usize, h: usize, valid: Option<&[bool]>) -> f64 {
    let (xp, yp) = (planes(x), planes(y));
    let mut sum = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let map = ssim_map(&xp[c], &yp[c], w, h);
        for (i, s) in map.iter().enumerate() {
            if valid.is_none_or(|v| v[i]) {
                sum += s;
                count += 1;
            }
        }
    }
    if count == 0 {
        1.0
    } else {
        sum / count as f64
    }
}
