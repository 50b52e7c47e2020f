//! Full-image inference, geometric self-ensemble and batch evaluation.
//!
//! Denoising is fully convolutional, so whole images of any size go through
//! in a single forward pass; a tiled mode with receptive-field overlap
//! exists for memory-constrained runs and produces identical output.
//! Evaluation corrupts each image with seeded noise, denoises it, and
//! reports PSNR/SSIM per image plus dataset averages as CSV.

use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{from_unit, load_image, to_unit, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::net::{CimmNetwork, NetworkConfig};
use crate::tensor::{Shape, Tensor};
use crate::train::{add_gaussian_noise, NoiseSpec};
use crate::transform;

/// Denoises one image tensor in a single forward pass; the output has the
/// input's shape.
pub fn denoise_image(net: &CimmNetwork<f32>, noisy: &Tensor<f32>) -> Result<Tensor<f32>> {
    Ok(net.forward(noisy)?.denoised)
}

/// Rough upper bound on transient memory for one forward pass: the live
/// activation tensors plus the padded convolution input.
pub fn estimate_forward_bytes(config: &NetworkConfig, input: Shape) -> usize {
    let pad = config
        .padding_schedule()
        .into_iter()
        .max()
        .unwrap_or(1)
        .max(1);
    let channels = config.channels.max(config.in_channels);
    let plain = input.n * channels * input.h * input.w;
    let padded = input.n * channels * (input.h + 2 * pad) * (input.w + 2 * pad);
    (4 * plain + padded) * std::mem::size_of::<f32>()
}

/// [`denoise_image`] that fails with a typed error instead of attempting a
/// pass whose estimated working set exceeds `limit_bytes`.
pub fn denoise_image_with_limit(
    net: &CimmNetwork<f32>,
    noisy: &Tensor<f32>,
    limit_bytes: usize,
) -> Result<Tensor<f32>> {
    let required = estimate_forward_bytes(net.config(), noisy.shape());
    if required > limit_bytes {
        return Err(Error::MemoryLimit {
            required,
            limit: limit_bytes,
        });
    }
    denoise_image(net, noisy)
}

/// Denoises tile by tile with an overlap of the network's receptive radius,
/// so every kept output pixel sees exactly the context it would see in a
/// whole-image pass; the result matches [`denoise_image`] bit for bit.
pub fn denoise_image_tiled(
    net: &CimmNetwork<f32>,
    noisy: &Tensor<f32>,
    tile: usize,
) -> Result<Tensor<f32>> {
    if tile == 0 {
        return Err(Error::InvalidConfig("tile size must be >= 1".into()));
    }
    let s = noisy.shape();
    let radius = net.config().receptive_radius();
    let mut out = Tensor::zeros(s);
    let mut y0 = 0;
    while y0 < s.h {
        let y1 = (y0 + tile).min(s.h);
        let sy0 = y0.saturating_sub(radius);
        let sy1 = (y1 + radius).min(s.h);
        let mut x0 = 0;
        while x0 < s.w {
            let x1 = (x0 + tile).min(s.w);
            let sx0 = x0.saturating_sub(radius);
            let sx1 = (x1 + radius).min(s.w);
            let sub = crop_spatial(noisy, sy0, sy1, sx0, sx1);
            let denoised = net.forward(&sub)?.denoised;
            for n in 0..s.n {
                for c in 0..s.c {
                    let src = denoised.plane(n, c);
                    let dst = out.plane_mut(n, c);
                    let sub_w = sx1 - sx0;
                    for y in y0..y1 {
                        let src_off = (y - sy0) * sub_w + (x0 - sx0);
                        dst[y * s.w + x0..y * s.w + x1]
                            .copy_from_slice(&src[src_off..src_off + (x1 - x0)]);
                    }
                }
            }
            x0 = x1;
        }
        y0 = y1;
    }
    Ok(out)
}

fn crop_spatial(t: &Tensor<f32>, y0: usize, y1: usize, x0: usize, x1: usize) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = (y1 - y0, x1 - x0);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, h, w));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..h {
                dst[y * w..(y + 1) * w]
                    .copy_from_slice(&src[(y0 + y) * s.w + x0..(y0 + y) * s.w + x1]);
            }
        }
    }
    out
}

/// Averages the denoised results of the eight dihedral transforms of the
/// input, each mapped back through its inverse transform:
/// `(1/8) * sum_i inverse_i(denoise(transform_i(y)))`.
///
/// The eight branches are summed pairwise, so when they coincide (for
/// example with a transform-equivariant network) the mean is exactly the
/// single-pass output.
pub fn self_ensemble(net: &CimmNetwork<f32>, noisy: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut branches = Vec::with_capacity(transform::TRANSFORM_COUNT);
    for i in 0..transform::TRANSFORM_COUNT {
        let transformed = transform::apply(noisy, i)?;
        let denoised = net.forward(&transformed)?.denoised;
        branches.push(transform::apply_inverse(&denoised, i)?);
    }
    while branches.len() > 1 {
        branches = branches
            .chunks(2)
            .map(|pair| pair[0].add(&pair[1]))
            .collect::<Result<_>>()?;
    }
    Ok(branches.pop().expect("eight branches reduce to one").scale(0.125))
}

/// Per-image evaluation result.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub path: PathBuf,
    pub sigma: f64,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim: f64,
    /// Wall-clock denoising time; the only non-deterministic field.
    pub millis: f64,
}

/// Arithmetic means over all evaluated images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalAverages {
    pub sigma: f64,
    pub psnr_noisy: f64,
    pub psnr_denoised: f64,
    pub ssim: f64,
    pub millis: f64,
}

/// Evaluation results plus any files that had to be skipped.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub skipped: Vec<(PathBuf, String)>,
}

impl EvalReport {
    pub fn averages(&self) -> Option<EvalAverages> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len() as f64;
        let sum = |f: fn(&EvalRecord) -> f64| self.records.iter().map(f).sum::<f64>() / n;
        Some(EvalAverages {
            sigma: sum(|r| r.sigma),
            psnr_noisy: sum(|r| r.psnr_noisy),
            psnr_denoised: sum(|r| r.psnr_denoised),
            ssim: sum(|r| r.ssim),
            millis: sum(|r| r.millis),
        })
    }

    /// CSV rendering with header `path,sigma,psnr_noisy,psnr_denoised,ssim,ms`
    /// and a closing `AVERAGE` row. `with_timing` controls whether the
    /// wall-clock column carries measurements or is left empty (useful when
    /// byte-identical reports are required).
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("path,sigma,psnr_noisy,psnr_denoised,ssim,ms\n");
        let ms = |v: f64| if with_timing { format!("{v}") } else { String::new() };
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.path.display(),
                r.sigma,
                r.psnr_noisy,
                r.psnr_denoised,
                r.ssim,
                ms(r.millis),
            ));
        }
        if let Some(avg) = self.averages() {
            out.push_str(&format!(
                "AVERAGE,{},{},{},{},{}\n",
                avg.sigma,
                avg.psnr_noisy,
                avg.psnr_denoised,
                avg.ssim,
                ms(avg.millis),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path, with_timing: bool) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv(with_timing).as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Evaluation switches.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Use the geometric self-ensemble instead of a single pass.
    pub ensemble: bool,
    /// Compute PSNR on 8-bit quantized outputs (the reporting convention);
    /// `false` computes it on the floating-point outputs for diagnostics.
    pub quantize: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ensemble: false,
            quantize: true,
        }
    }
}

/// PSNR between two unit-scale tensors, on the 0-255 scale, without
/// quantization.
fn psnr_unit_tensors(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mut se = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = (x as f64 - y as f64) * 255.0;
        se += d * d;
    }
    let mse = se / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Corrupts, denoises and scores every image of `dataset`.
///
/// Noise is drawn from a per-image generator seeded by `seed` and the image
/// index, so reports are reproducible regardless of how many worker threads
/// run; results are merged in path order. Files that fail to load or
/// process are recorded in `skipped` rather than aborting the run.
pub fn evaluate_dataset(
    net: &CimmNetwork<f32>,
    dataset: &Dataset,
    noise: &NoiseSpec,
    seed: u64,
    options: &EvalOptions,
) -> Result<EvalReport> {
    noise.validate()?;
    let results: Vec<(usize, ImageOutcome)> = dataset
        .paths()
        .par_iter()
        .enumerate()
        .map(|(index, path)| (index, evaluate_one(net, path, index, noise, seed, options)))
        .collect();

    let mut ordered = results;
    ordered.sort_by_key(|(index, _)| *index);
    let mut report = EvalReport::default();
    for (_, outcome) in ordered {
        match outcome {
            Ok(record) => report.records.push(record),
            Err(skip) => report.skipped.push(skip),
        }
    }
    Ok(report)
}

/// Result for one image: a record, or the path and reason it was skipped.
type ImageOutcome = std::result::Result<EvalRecord, (PathBuf, String)>;

fn evaluate_one(
    net: &CimmNetwork<f32>,
    path: &Path,
    index: usize,
    noise: &NoiseSpec,
    seed: u64,
    options: &EvalOptions,
) -> ImageOutcome {
    let fail = |e: Error| (path.to_path_buf(), e.to_string());
    let clean_img = load_image(path).map_err(fail)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let sigma = noise.sample_sigma(&mut rng);
    let clean_t = to_unit(&clean_img);
    let noisy_t = add_gaussian_noise(&clean_t, sigma, &mut rng);
    let noisy_img = from_unit(&noisy_t).map_err(fail)?;

    let start = Instant::now();
    let denoised_t = if options.ensemble {
        self_ensemble(net, &noisy_t).map_err(fail)?
    } else {
        denoise_image(net, &noisy_t).map_err(fail)?
    };
    let millis = start.elapsed().as_secs_f64() * 1e3;

    let denoised_img = from_unit(&denoised_t).map_err(fail)?;
    let (psnr_noisy, psnr_denoised) = if options.quantize {
        (
            psnr(&noisy_img, &clean_img).map_err(fail)?,
            psnr(&denoised_img, &clean_img).map_err(fail)?,
        )
    } else {
        (
            psnr_unit_tensors(&noisy_t, &clean_t),
            psnr_unit_tensors(&denoised_t, &clean_t),
        )
    };
    let ssim_score = ssim(&denoised_img, &clean_img).map_err(fail)?;
    Ok(EvalRecord {
        path: path.to_path_buf(),
        sigma,
        psnr_noisy,
        psnr_denoised,
        ssim: ssim_score,
        millis,
    })
}
