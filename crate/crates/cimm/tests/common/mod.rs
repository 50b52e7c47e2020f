//! Shared test support: independent reference implementations (oracles) and
//! synthetic data generators. Nothing here calls into the optimized code
//! paths it is used to check.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cimm::data::{save_image, ImageBuffer};
use cimm::net::CimmNetwork;
use cimm::tensor::{Shape, Tensor};
use cimm::ConvParams;

/// Six-nested-loop reference convolution, written directly from the
/// definition: `out[n,o,y,x] = bias[o] + sum_{i,u,v} in_pad[...] * w[o,i,u,v]`
/// with zero padding.
pub fn naive_conv2d(input: &Tensor<f64>, params: &ConvParams<f64>) -> Tensor<f64> {
    let s = input.shape();
    let (d, p) = (params.dilation() as isize, params.padding() as isize);
    let (kh, kw) = (params.kernel_h(), params.kernel_w());
    let h_out = (s.h as isize + 2 * p - d * (kh as isize - 1)) as usize;
    let w_out = (s.w as isize + 2 * p - d * (kw as isize - 1)) as usize;
    let mut out = Tensor::zeros(Shape::new(s.n, params.out_channels(), h_out, w_out));
    for n in 0..s.n {
        for o in 0..params.out_channels() {
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut acc = params.bias()[o];
                    for i in 0..params.in_channels() {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = y as isize + d * u as isize - p;
                                let xx = x as isize + d * v as isize - p;
                                if yy >= 0 && yy < s.h as isize && xx >= 0 && xx < s.w as isize {
                                    acc += input.at(n, i, yy as usize, xx as usize)
                                        * params.weights().at(o, i, u, v);
                                }
                            }
                        }
                    }
                    *out.at_mut(n, o, y, x) = acc;
                }
            }
        }
    }
    out
}

/// Relative error with an absolute floor, so near-zero pairs compare on an
/// absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

pub fn assert_all_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length mismatch");
    for (i, (&a, &e)) in actual.iter().zip(expected).enumerate() {
        let err = rel_err(a, e);
        assert!(err <= tol, "{what}[{i}]: {a} vs {e} (rel err {err:.3e})");
    }
}

pub fn random_tensor(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.count()).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_conv_params(
    out_ch: usize,
    in_ch: usize,
    kernel: usize,
    dilation: usize,
    padding: usize,
    rng: &mut ChaCha8Rng,
) -> ConvParams<f64> {
    let weights = random_tensor(Shape::new(out_ch, in_ch, kernel, kernel), rng, -1.0, 1.0);
    let bias = (0..out_ch).map(|_| rng.random_range(-1.0..1.0)).collect();
    ConvParams::new(weights, bias, dilation, padding).unwrap()
}

pub fn inner_product(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central finite difference of `loss` with respect to one weight of one
/// layer (layers counted in declaration order).
pub fn fd_weight_gradient(
    net: &mut CimmNetwork<f64>,
    layer: usize,
    index: usize,
    step: f64,
    loss: &mut impl FnMut(&CimmNetwork<f64>) -> f64,
) -> f64 {
    let original = net.layers().nth(layer).unwrap().weights().data()[index];
    set_weight(net, layer, index, original + step);
    let plus = loss(net);
    set_weight(net, layer, index, original - step);
    let minus = loss(net);
    set_weight(net, layer, index, original);
    (plus - minus) / (2.0 * step)
}

/// Central finite difference with respect to one bias entry.
pub fn fd_bias_gradient(
    net: &mut CimmNetwork<f64>,
    layer: usize,
    index: usize,
    step: f64,
    loss: &mut impl FnMut(&CimmNetwork<f64>) -> f64,
) -> f64 {
    let original = net.layers().nth(layer).unwrap().bias()[index];
    set_bias(net, layer, index, original + step);
    let plus = loss(net);
    set_bias(net, layer, index, original - step);
    let minus = loss(net);
    set_bias(net, layer, index, original);
    (plus - minus) / (2.0 * step)
}

fn set_weight(net: &mut CimmNetwork<f64>, layer: usize, index: usize, value: f64) {
    net.layers_mut().nth(layer).unwrap().weights_mut().data_mut()[index] = value;
}

fn set_bias(net: &mut CimmNetwork<f64>, layer: usize, index: usize, value: f64) {
    net.layers_mut().nth(layer).unwrap().bias_mut()[index] = value;
}

/// Direct per-window double-loop SSIM: 11x11 Gaussian window (sigma 1.5),
/// K1 = 0.01, K2 = 0.03, dynamic range 255, valid windows only, channel
/// scores averaged.
pub fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    const WIN: usize = 11;
    let mut weights = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (u, row) in weights.iter_mut().enumerate() {
        for (v, w) in row.iter_mut().enumerate() {
            let du = u as f64 - 5.0;
            let dv = v as f64 - 5.0;
            *w = (-(du * du + dv * dv) / (2.0 * 1.5 * 1.5)).exp();
            total += *w;
        }
    }
    for row in weights.iter_mut() {
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);

    let (h, w) = (a.height(), a.width());
    let mut channel_sum = 0.0;
    for c in 0..a.channels() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - WIN {
            for x0 in 0..=w - WIN {
                let (mut mu_a, mut mu_b) = (0.0, 0.0);
                let (mut e_aa, mut e_bb, mut e_ab) = (0.0, 0.0, 0.0);
                for (u, row) in weights.iter().enumerate() {
                    for (v, &wt) in row.iter().enumerate() {
                        let pa = a.at(y0 + u, x0 + v, c) as f64;
                        let pb = b.at(y0 + u, x0 + v, c) as f64;
                        mu_a += wt * pa;
                        mu_b += wt * pb;
                        e_aa += wt * pa * pa;
                        e_bb += wt * pb * pb;
                        e_ab += wt * pa * pb;
                    }
                }
                let var_a = e_aa - mu_a * mu_a;
                let var_b = e_bb - mu_b * mu_b;
                let cov = e_ab - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                sum += num / den;
                count += 1;
            }
        }
        channel_sum += sum / count as f64;
    }
    channel_sum / a.channels() as f64
}

/// Piecewise-smooth grayscale test image: a gentle gradient plus a few flat
/// shapes, with values kept well inside [0, 255] so sigma=25 noise rarely
/// clips.
pub fn synthetic_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let base = rng.random_range(120.0..136.0);
    let gx = rng.random_range(-8.0..8.0) / w as f64;
    let gy = rng.random_range(-8.0..8.0) / h as f64;
    let mut field = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            field[y * w + x] = base + gx * x as f64 + gy * y as f64;
        }
    }
    for _ in 0..rng.random_range(3..7) {
        let offset = rng.random_range(12.0..28.0) * if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
        if rng.random_range(0..2) == 0 {
            // disk
            let cy = rng.random_range(0..h) as f64;
            let cx = rng.random_range(0..w) as f64;
            let r = rng.random_range(4.0..(h.min(w) as f64 / 3.0));
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    if dy * dy + dx * dx <= r * r {
                        field[y * w + x] += offset;
                    }
                }
            }
        } else {
            // axis-aligned rectangle
            let y0 = rng.random_range(0..h);
            let y1 = rng.random_range(y0..h) + 1;
            let x0 = rng.random_range(0..w);
            let x1 = rng.random_range(x0..w) + 1;
            for y in y0..y1.min(h) {
                for x in x0..x1.min(w) {
                    field[y * w + x] += offset;
                }
            }
        }
    }
    let data = field
        .iter()
        .map(|&v| v.clamp(80.0, 176.0).round() as u8)
        .collect();
    ImageBuffer::new(h, w, 1, data).unwrap()
}

/// Writes `count` synthetic PGM images into `dir` and returns their paths.
pub fn write_synthetic_dataset(
    dir: &Path,
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Vec<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let img = synthetic_image(h, w, &mut rng);
            let path = dir.join(format!("synth_{i:03}.pgm"));
            save_image(&path, &img).unwrap();
            path
        })
        .collect()
}
