//! Image quality metrics on 8-bit images: peak signal-to-noise ratio and
//! the structural similarity index.
//!
//! SSIM uses the standard single-scale parameters: an 11x11 Gaussian window
//! with sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic range 255, and windows
//! restricted to the valid interior (no padding). Color scores are the mean
//! of the per-channel scores; color PSNR pools the squared error over all
//! channels before the logarithm, giving one number per image.

use crate::data::ImageBuffer;
use crate::error::{Error, Result};

/// SSIM window side length.
pub const SSIM_WINDOW: usize = 11;
/// Gaussian sigma of the SSIM window.
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 255.0;

fn check_same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::shape(
            format!("{}x{}x{}", a.height(), a.width(), a.channels()),
            format!("{}x{}x{}", b.height(), b.width(), b.channels()),
        ));
    }
    Ok(())
}

/// `10 * log10(255^2 / MSE)` with the MSE averaged over every sample of
/// every channel; positive infinity when the images are identical.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    let mut se = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x as f64 - y as f64;
        se += d * d;
    }
    let mse = se / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// The normalized 11x11 Gaussian window used by SSIM.
pub fn ssim_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    // Normalize so the full 2-D window (outer product) sums to 1.
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local structural similarity. Color images score each channel
/// separately and average the three results.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_same_dims(a, b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            h: a.height(),
            w: a.width(),
            size: SSIM_WINDOW,
        });
    }
    let mut total = 0.0;
    for c in 0..a.channels() {
        total += ssim_plane(a, b, c);
    }
    Ok(total / a.channels() as f64)
}

fn extract_plane(img: &ImageBuffer, c: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            out.push(img.at(y, x, c) as f64);
        }
    }
    out
}

fn ssim_plane(a: &ImageBuffer, b: &ImageBuffer, channel: usize) -> f64 {
    let (h, w) = (a.height(), a.width());
    let pa = extract_plane(a, channel);
    let pb = extract_plane(b, channel);
    let prod: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();
    let sq_a: Vec<f64> = pa.iter().map(|x| x * x).collect();
    let sq_b: Vec<f64> = pb.iter().map(|y| y * y).collect();

    let window = ssim_window();
    let mu_a = filter_valid(&pa, h, w, &window);
    let mu_b = filter_valid(&pb, h, w, &window);
    let e_aa = filter_valid(&sq_a, h, w, &window);
    let e_bb = filter_valid(&sq_b, h, w, &window);
    let e_ab = filter_valid(&prod, h, w, &window);

    let c1 = (SSIM_K1 * DYNAMIC_RANGE) * (SSIM_K1 * DYNAMIC_RANGE);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE) * (SSIM_K2 * DYNAMIC_RANGE);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        sum += num / den;
    }
    sum / mu_a.len() as f64
}

/// Separable Gaussian filtering restricted to positions where the window
/// fits entirely inside the image; output is
/// `(h - win + 1) x (w - win + 1)`.
fn filter_valid(plane: &[f64], h: usize, w: usize, window: &[f64]) -> Vec<f64> {
    let win = window.len();
    let w_out = w - win + 1;
    let h_out = h - win + 1;
    // Horizontal pass: h rows of w_out values.
    let mut horiz = vec![0.0f64; h * w_out];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let dst = &mut horiz[y * w_out..(y + 1) * w_out];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &wk) in window.iter().enumerate() {
                acc += wk * row[x + k];
            }
            *d = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0f64; h_out * w_out];
    for y in 0..h_out {
        let dst = &mut out[y * w_out..(y + 1) * w_out];
        for (k, &wk) in window.iter().enumerate() {
            let src = &horiz[(y + k) * w_out..(y + k + 1) * w_out];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}
