//! Training: mean-squared-error objective on residual noise, Adam updates
//! with decoupled weight decay, the halving learning-rate schedule, and
//! on-the-fly batch assembly (random crops, dihedral augmentation, Gaussian
//! noise injection).
//!
//! Everything is deterministic for a fixed seed: the loop owns a single
//! seeded generator and draws from it in a fixed order (image index, crop
//! corner, augmentation index, noise level, noise field; one patch at a
//! time).

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::ImageBuffer;
use crate::error::{Error, Result};
use crate::net::{CimmNetwork, Gradients};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::transform;

/// Every hyperparameter of the optimization recipe. Defaults are the
/// standard recipe: 40x40 patches in batches of 64, Adam at 1e-4 halved
/// every 10 epochs for 40 epochs, weight decay 1e-4.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub lr_halving_period: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Steps per epoch. `None` derives
    /// `ceil(total_training_pixels / (batch_size * patch_size^2))`, so one
    /// epoch sees roughly as many pixels as the dataset holds.
    pub iterations_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            lr_halving_period: 10,
            epochs: 40,
            batch_size: 64,
            patch_size: 40,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            iterations_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.base_lr <= 0.0 {
            return fail("base_lr must be positive");
        }
        if self.lr_halving_period == 0 {
            return fail("lr_halving_period must be >= 1");
        }
        if self.batch_size == 0 || self.patch_size == 0 {
            return fail("batch_size and patch_size must be >= 1");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return fail("epsilon must be positive");
        }
        Ok(())
    }

    /// Steps per epoch for `images` when `iterations_per_epoch` is unset.
    pub fn derived_iterations(&self, images: &[ImageBuffer]) -> usize {
        let total: usize = images.iter().map(|i| i.height() * i.width()).sum();
        let per_batch = self.batch_size * self.patch_size * self.patch_size;
        total.div_ceil(per_batch).max(1)
    }
}

/// Noise regime: a single level, or one drawn uniformly per patch from a
/// range. Levels are quoted on the 0-255 intensity scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseSpec {
    Specific(f64),
    Agnostic { lo: f64, hi: f64 },
}

impl NoiseSpec {
    /// The blind-denoising default: levels drawn from [1, 50].
    pub fn agnostic_default() -> Self {
        NoiseSpec::Agnostic { lo: 1.0, hi: 50.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Specific(s) if s > 0.0 => Ok(()),
            NoiseSpec::Specific(s) => Err(Error::InvalidConfig(format!(
                "noise level must be positive, got {s}"
            ))),
            NoiseSpec::Agnostic { lo, hi } if lo > 0.0 && lo <= hi => Ok(()),
            NoiseSpec::Agnostic { lo, hi } => Err(Error::InvalidConfig(format!(
                "noise range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            ))),
        }
    }

    /// Draws the level for one patch. A collapsed range consumes no
    /// randomness, so `Agnostic {lo: s, hi: s}` behaves exactly like
    /// `Specific(s)`.
    pub fn sample_sigma<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Specific(s) => s,
            NoiseSpec::Agnostic { lo, hi } if lo == hi => lo,
            NoiseSpec::Agnostic { lo, hi } => rng.random_range(lo..=hi),
        }
    }
}

impl std::str::FromStr for NoiseSpec {
    type Err = Error;

    /// `specific:<sigma>`, `agnostic`, or `agnostic:<lo>,<hi>`.
    fn from_str(s: &str) -> Result<Self> {
        let spec = if s == "agnostic" {
            NoiseSpec::agnostic_default()
        } else if let Some(sigma) = s.strip_prefix("specific:") {
            let sigma = sigma
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad noise level: {sigma}")))?;
            NoiseSpec::Specific(sigma)
        } else if let Some(range) = s.strip_prefix("agnostic:") {
            let (lo, hi) = range
                .split_once(',')
                .ok_or_else(|| Error::InvalidConfig(format!("bad noise range: {range}")))?;
            NoiseSpec::Agnostic {
                lo: lo
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad noise range: {range}")))?,
                hi: hi
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad noise range: {range}")))?,
            }
        } else {
            return Err(Error::InvalidConfig(format!(
                "noise spec must be 'specific:<sigma>', 'agnostic' or 'agnostic:<lo>,<hi>', got '{s}'"
            )));
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Mean over the batch of per-sample squared error sums:
/// `loss = (1/N) * sum_i ||denoised_i - clean_i||^2`, with the gradient
/// `(2/N) * (denoised - clean)`.
pub fn mse_loss<T: Scalar>(denoised: &Tensor<T>, clean: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if denoised.shape() != clean.shape() {
        return Err(Error::shape(
            clean.shape().to_string(),
            denoised.shape().to_string(),
        ));
    }
    let n = denoised.shape().n as f64;
    let mut loss = 0.0;
    for (&d, &x) in denoised.data().iter().zip(clean.data()) {
        let diff = d.as_f64() - x.as_f64();
        loss += diff * diff;
    }
    loss /= n;
    let scale = T::from_f64(2.0 / n);
    let grad = denoised.sub(clean)?.scale(scale);
    Ok((loss, grad))
}

/// Learning rate at `epoch`: the base rate halved once per
/// `lr_halving_period` epochs.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.base_lr * 0.5f64.powi((epoch / config.lr_halving_period) as i32)
}

/// First/second-moment accumulators for every parameter, plus the step
/// counter used for bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    layers: Vec<LayerMoments<T>>,
    step: usize,
}

#[derive(Clone, Debug)]
struct LayerMoments<T> {
    m_weights: Vec<T>,
    v_weights: Vec<T>,
    m_bias: Vec<T>,
    v_bias: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed accumulators mirroring the shapes of `net`'s parameters.
    pub fn new(net: &CimmNetwork<T>) -> Self {
        let layers = net
            .layers()
            .map(|l| LayerMoments {
                m_weights: vec![T::zero(); l.weights().len()],
                v_weights: vec![T::zero(); l.weights().len()],
                m_bias: vec![T::zero(); l.bias().len()],
                v_bias: vec![T::zero(); l.bias().len()],
            })
            .collect();
        AdamState { layers, step: 0 }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One bias-corrected Adam update over every parameter of `net`, with
/// decoupled weight decay (`- lr * weight_decay * param`, applied to the
/// pre-update value, outside the moment accumulators).
pub fn adam_step<T: Scalar>(
    net: &mut CimmNetwork<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    let layer_count = net.layers().count();
    if state.layers.len() != layer_count || grads.layers().count() != layer_count {
        return Err(Error::shape(
            format!("{layer_count} layers"),
            format!(
                "{} moment entries / {} gradient entries",
                state.layers.len(),
                grads.layers().count()
            ),
        ));
    }
    state.step += 1;
    let t = state.step;
    for ((layer, grad), moments) in net
        .layers_mut()
        .zip(grads.layers())
        .zip(state.layers.iter_mut())
    {
        if layer.weights().len() != grad.weights.len() || layer.bias().len() != grad.bias.len() {
            return Err(Error::shape(
                format!("{}+{} params", layer.weights().len(), layer.bias().len()),
                format!("{}+{} grads", grad.weights.len(), grad.bias.len()),
            ));
        }
        adam_update_slice(
            layer.weights_mut().data_mut(),
            grad.weights.data(),
            &mut moments.m_weights,
            &mut moments.v_weights,
            t,
            lr,
            config,
        );
        adam_update_slice(
            layer.bias_mut(),
            &grad.bias,
            &mut moments.m_bias,
            &mut moments.v_bias,
            t,
            lr,
            config,
        );
    }
    Ok(())
}

/// The update rule on a flat parameter slice; exposed for direct testing.
pub fn adam_update_slice<T: Scalar>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    t: usize,
    lr: f64,
    config: &TrainConfig,
) {
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        let mi = config.beta1 * m[i].as_f64() + (1.0 - config.beta1) * g;
        let vi = config.beta2 * v[i].as_f64() + (1.0 - config.beta2) * g * g;
        m[i] = T::from_f64(mi);
        v[i] = T::from_f64(vi);
        let m_hat = mi / bc1;
        let v_hat = vi / bc2;
        let p = params[i].as_f64();
        params[i] =
            T::from_f64(p - lr * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * p));
    }
}

/// Adds i.i.d. zero-mean Gaussian noise with standard deviation
/// `sigma_255 / 255` to a unit-scale tensor. The result is intentionally
/// not clipped to [0, 1]; clamping happens only when images are written.
pub fn add_gaussian_noise<T: Scalar, R: Rng>(
    patch: &Tensor<T>,
    sigma_255: f64,
    rng: &mut R,
) -> Tensor<T> {
    let std = sigma_255 / 255.0;
    let mut out = patch.clone();
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += T::from_f64(z * std);
    }
    out
}

/// Applies dihedral transform `index` (0..=7) to a training patch. Odd
/// rotations require square patches so batches keep a single shape.
pub fn augment<T: Scalar>(patch: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
    let s = patch.shape();
    if index % 2 == 1 && s.h != s.w {
        return Err(Error::shape(
            "square patch for 90/270-degree rotations",
            s.to_string(),
        ));
    }
    transform::apply(patch, index)
}

/// Assembles one training batch: for each of `batch_size` slots, a random
/// image, a random crop, a random dihedral transform, a noise level from
/// `noise`, and a fresh noise field. Returns `(noisy, clean)`.
pub fn make_batch<R: Rng>(
    images: &[ImageBuffer],
    config: &TrainConfig,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset("<in-memory training set>".into()));
    }
    let channels = images[0].channels();
    if images.iter().any(|i| i.channels() != channels) {
        return Err(Error::InvalidConfig(
            "training images must all have the same channel count".into(),
        ));
    }
    let p = config.patch_size;
    let shape = Shape::new(config.batch_size, channels, p, p);
    let mut clean = Tensor::<f32>::zeros(shape);
    let mut noisy = Tensor::<f32>::zeros(shape);
    for i in 0..config.batch_size {
        let img = &images[rng.random_range(0..images.len())];
        let crop = crate::data::random_crop(img, p, rng)?;
        let patch = augment(&crop, rng.random_range(0..transform::TRANSFORM_COUNT))?;
        let sigma = noise.sample_sigma(rng);
        let corrupted = add_gaussian_noise(&patch, sigma, rng);
        for c in 0..channels {
            clean.plane_mut(i, c).copy_from_slice(patch.plane(0, c));
            noisy.plane_mut(i, c).copy_from_slice(corrupted.plane(0, c));
        }
    }
    Ok((noisy, clean))
}

/// One optimizer step's history entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Hooks invoked by [`train_loop`]; an error aborts training.
pub trait TrainCallback {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn on_epoch_end(&mut self, _epoch: usize, _net: &CimmNetwork<f32>) -> Result<()> {
        Ok(())
    }
}

/// Callback that does nothing.
pub struct NoCallback;

impl TrainCallback for NoCallback {}

/// Runs the full optimization loop: `epochs * iterations_per_epoch` steps
/// of batch assembly, forward, loss, backward and Adam update at the
/// scheduled learning rate. Returns one record per step. A non-finite loss
/// aborts with a diagnostic error.
pub fn train_loop(
    net: &mut CimmNetwork<f32>,
    images: &[ImageBuffer],
    config: &TrainConfig,
    noise: &NoiseSpec,
    callback: &mut dyn TrainCallback,
) -> Result<Vec<StepRecord>> {
    config.validate()?;
    noise.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset("<in-memory training set>".into()));
    }
    for img in images {
        if img.height() < config.patch_size || img.width() < config.patch_size {
            return Err(Error::ImageTooSmall {
                h: img.height(),
                w: img.width(),
                size: config.patch_size,
            });
        }
    }
    let iterations = config
        .iterations_per_epoch
        .unwrap_or_else(|| config.derived_iterations(images));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Stream 1: batch assembly. Stream 0 is reserved for weight init.
    rng.set_stream(1);
    let mut state = AdamState::new(net);
    let mut history = Vec::with_capacity(config.epochs * iterations);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        for _ in 0..iterations {
            let (noisy, clean) = make_batch(images, config, noise, &mut rng)?;
            let (pass, cache) = net.forward_training(&noisy)?;
            let (loss, grad) = mse_loss(&pass.denoised, &clean)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss });
            }
            let grads = net.backward(&cache, &grad)?;
            adam_step(net, &grads, &mut state, lr, config)?;
            step += 1;
            let record = StepRecord {
                step,
                epoch,
                lr,
                loss,
            };
            history.push(record);
            callback.on_step(&record)?;
        }
        callback.on_epoch_end(epoch, net)?;
    }
    Ok(history)
}

/// Writes the training history as CSV with header `step,epoch,lr,loss`.
pub fn write_history_csv(path: &Path, history: &[StepRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,epoch,lr,loss")?;
    for r in history {
        writeln!(w, "{},{},{},{}", r.step, r.epoch, r.lr, r.loss)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetworkConfig;

    fn flat_image(h: usize, w: usize, value: u8) -> ImageBuffer {
        ImageBuffer::new(h, w, 1, vec![value; h * w]).unwrap()
    }

    #[test]
    fn mse_of_identical_batches_is_zero() {
        let x = Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![0.1f64, 0.2, 0.3, 0.4]).unwrap();
        let (loss, grad) = mse_loss(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_single_pixel_example() {
        let d = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.5f64]).unwrap();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.0f64]).unwrap();
        let (loss, grad) = mse_loss(&d, &x).unwrap();
        assert_eq!(loss, 0.25);
        assert_eq!(grad.data(), &[1.0]);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let d = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 3));
        assert!(mse_loss(&d, &x).is_err());
    }

    #[test]
    fn lr_schedule_halves_every_period() {
        let config = TrainConfig::default();
        assert_eq!(lr_schedule(0, &config), 1e-4);
        assert_eq!(lr_schedule(9, &config), 1e-4);
        assert_eq!(lr_schedule(10, &config), 5e-5);
        assert_eq!(lr_schedule(25, &config), 2.5e-5);
        let mut prev = f64::INFINITY;
        for epoch in 0..45 {
            let lr = lr_schedule(epoch, &config);
            assert!(lr <= prev);
            assert_eq!(lr, lr_schedule(epoch - epoch % 10, &config));
            prev = lr;
        }
    }

    #[test]
    fn adam_zero_grad_zero_decay_leaves_params() {
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let net_config = NetworkConfig::with_dims(1, 1, 2, 3);
        let mut net = CimmNetwork::<f64>::init(&net_config, 4).unwrap();
        let reference = net.clone();
        let mut state = AdamState::new(&net);
        let y = Tensor::full(Shape::new(1, 1, 6, 6), 0.5);
        let (_, cache) = net.forward_training(&y).unwrap();
        let grads = net.backward(&cache, &Tensor::zeros(y.shape())).unwrap();
        adam_step(&mut net, &grads, &mut state, 1e-4, &config).unwrap();
        assert_eq!(net, reference);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_single_step_hand_value() {
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = [0.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        adam_update_slice(&mut p, &[1.0], &mut m, &mut v, 1, 1e-4, &config);
        // Bias correction makes m_hat = v_hat = 1 on the first step, so the
        // update is exactly -lr / (1 + eps).
        assert_eq!(p[0], -(1e-4 / (1.0 + 1e-8)));
    }

    #[test]
    fn adam_repeated_grads_move_monotonically() {
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = [1.0f64];
        let mut m = [0.0f64];
        let mut v = [0.0f64];
        let mut prev = p[0];
        for t in 1..=5 {
            adam_update_slice(&mut p, &[2.0], &mut m, &mut v, t, 1e-3, &config);
            assert!(p[0] < prev, "step {t}: {} !< {prev}", p[0]);
            prev = p[0];
        }
    }

    #[test]
    fn noise_with_zero_sigma_is_identity() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.1f32, 0.5, 0.9]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(add_gaussian_noise(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 8, 8));
        let a = add_gaussian_noise(&x, 25.0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = add_gaussian_noise(&x, 25.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let c = add_gaussian_noise(&x, 25.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_ne!(a, c);
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 1000, 1000));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noisy = add_gaussian_noise(&x, 25.0, &mut rng);
        let n = noisy.len() as f64;
        let mean: f64 = noisy.data().iter().sum::<f64>() / n;
        let var: f64 = noisy.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sigma = 25.0 / 255.0;
        // mean within 3 standard errors of zero, std within 1%
        assert!(mean.abs() < 3.0 * sigma / n.sqrt(), "mean {mean}");
        assert!(
            (var.sqrt() - sigma).abs() / sigma < 0.01,
            "std {} vs {sigma}",
            var.sqrt()
        );
    }

    #[test]
    fn augment_identity_and_group_properties() {
        let patch =
            Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(augment(&patch, 0).unwrap(), patch);
        let mut r = patch.clone();
        for _ in 0..4 {
            r = augment(&r, 1).unwrap();
        }
        assert_eq!(r, patch);
        // Fixed orientation convention: 90 degrees counter-clockwise.
        assert_eq!(augment(&patch, 1).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn augment_rejects_rectangles_for_odd_rotations() {
        let patch = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 3));
        assert!(augment(&patch, 1).is_err());
        assert!(augment(&patch, 7).is_err());
        assert!(augment(&patch, 2).is_ok());
        assert!(augment(&patch, 4).is_ok());
    }

    #[test]
    fn batch_has_configured_shape() {
        let images = vec![flat_image(48, 48, 100); 3];
        let config = TrainConfig {
            batch_size: 64,
            patch_size: 40,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (noisy, clean) =
            make_batch(&images, &config, &NoiseSpec::Specific(25.0), &mut rng).unwrap();
        assert_eq!(noisy.shape(), Shape::new(64, 1, 40, 40));
        assert_eq!(clean.shape(), Shape::new(64, 1, 40, 40));
        // Clean patches hold the uncorrupted pixels.
        assert!(clean.data().iter().all(|&v| v == 100.0 / 255.0));
        assert_ne!(noisy, clean);
    }

    #[test]
    fn collapsed_agnostic_range_equals_specific() {
        let images = vec![flat_image(44, 44, 90); 2];
        let config = TrainConfig {
            batch_size: 4,
            patch_size: 16,
            ..TrainConfig::default()
        };
        let spec = |n: &NoiseSpec| {
            make_batch(&images, &config, n, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
        };
        let a = spec(&NoiseSpec::Specific(25.0));
        let b = spec(&NoiseSpec::Agnostic { lo: 25.0, hi: 25.0 });
        assert_eq!(a, b);
    }

    #[test]
    fn batch_is_deterministic_per_seed() {
        let images = vec![flat_image(50, 50, 80), flat_image(60, 44, 170)];
        let config = TrainConfig {
            batch_size: 8,
            patch_size: 20,
            ..TrainConfig::default()
        };
        let noise = NoiseSpec::agnostic_default();
        let a = make_batch(&images, &config, &noise, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let b = make_batch(&images, &config, &noise, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_leaves_network_unchanged() {
        let mut net = CimmNetwork::init(&NetworkConfig::with_dims(1, 1, 1, 2), 8).unwrap();
        let reference = net.clone();
        let images = vec![flat_image(20, 20, 128)];
        let config = TrainConfig {
            epochs: 0,
            batch_size: 2,
            patch_size: 8,
            ..TrainConfig::default()
        };
        let history = train_loop(
            &mut net,
            &images,
            &config,
            &NoiseSpec::Specific(25.0),
            &mut NoCallback,
        )
        .unwrap();
        assert!(history.is_empty());
        assert_eq!(net, reference);
    }

    #[test]
    fn history_length_equals_step_count() {
        let mut net = CimmNetwork::init(&NetworkConfig::with_dims(1, 1, 1, 2), 8).unwrap();
        let images = vec![flat_image(20, 20, 128)];
        let config = TrainConfig {
            epochs: 3,
            iterations_per_epoch: Some(4),
            batch_size: 2,
            patch_size: 8,
            ..TrainConfig::default()
        };
        let history = train_loop(
            &mut net,
            &images,
            &config,
            &NoiseSpec::Specific(25.0),
            &mut NoCallback,
        )
        .unwrap();
        assert_eq!(history.len(), 12);
        assert_eq!(history.last().unwrap().step, 12);
        assert_eq!(history.last().unwrap().epoch, 2);
    }

    #[test]
    fn training_runs_are_reproducible() {
        let images = vec![flat_image(24, 24, 100), flat_image(24, 24, 150)];
        let config = TrainConfig {
            epochs: 2,
            iterations_per_epoch: Some(3),
            batch_size: 2,
            patch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let mut net = CimmNetwork::init(&NetworkConfig::with_dims(1, 1, 2, 3), 8).unwrap();
            let history = train_loop(
                &mut net,
                &images,
                &config,
                &NoiseSpec::Specific(25.0),
                &mut NoCallback,
            )
            .unwrap();
            (net, history)
        };
        let (net_a, hist_a) = run();
        let (net_b, hist_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(hist_a, hist_b);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let mut net = CimmNetwork::init(&NetworkConfig::with_dims(1, 1, 1, 2), 8).unwrap();
        for layer in net.layers_mut() {
            layer.weights_mut().data_mut().fill(1e30);
        }
        let images = vec![flat_image(20, 20, 200)];
        let config = TrainConfig {
            epochs: 1,
            iterations_per_epoch: Some(1),
            batch_size: 1,
            patch_size: 8,
            ..TrainConfig::default()
        };
        let err = train_loop(
            &mut net,
            &images,
            &config,
            &NoiseSpec::Specific(25.0),
            &mut NoCallback,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }));
    }

    #[test]
    fn training_rejects_too_small_images() {
        let mut net = CimmNetwork::init(&NetworkConfig::with_dims(1, 1, 1, 2), 8).unwrap();
        let images = vec![flat_image(20, 20, 128)];
        let config = TrainConfig {
            patch_size: 40,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_loop(
                &mut net,
                &images,
                &config,
                &NoiseSpec::Specific(25.0),
                &mut NoCallback
            ),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn noise_spec_parsing() {
        assert_eq!(
            "specific:25".parse::<NoiseSpec>().unwrap(),
            NoiseSpec::Specific(25.0)
        );
        assert_eq!(
            "agnostic".parse::<NoiseSpec>().unwrap(),
            NoiseSpec::Agnostic { lo: 1.0, hi: 50.0 }
        );
        assert_eq!(
            "agnostic:5,30".parse::<NoiseSpec>().unwrap(),
            NoiseSpec::Agnostic { lo: 5.0, hi: 30.0 }
        );
        assert!("specific:-3".parse::<NoiseSpec>().is_err());
        assert!("agnostic:30,5".parse::<NoiseSpec>().is_err());
        assert!("gaussian".parse::<NoiseSpec>().is_err());
    }

    #[test]
    fn derived_iterations_cover_dataset_pixels() {
        let config = TrainConfig {
            batch_size: 16,
            patch_size: 40,
            ..TrainConfig::default()
        };
        // 10 images of 128x128 = 163840 px; batch covers 25600 px.
        let images = vec![flat_image(128, 128, 10); 10];
        assert_eq!(config.derived_iterations(&images), 7);
    }
}
