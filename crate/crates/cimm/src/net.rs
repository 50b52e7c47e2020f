//! The denoising network: a chain of identity-mapping modules.
//!
//! Each module is a run of (ReLU, convolution) pairs; the output of the
//! first pair is added to the output of the last pair, and the sum feeds the
//! next module. A final convolution maps the chain output back to the image
//! channel count and predicts the noise; the denoised image is the input
//! minus that prediction.
//!
//! The backward pass is hand-wired to this fixed topology and is the exact
//! adjoint of `forward` (verified against central finite differences in the
//! test suite).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conv::{conv2d_backward, conv2d_forward, ConvParams};
use crate::error::{Error, Result};
use crate::tensor::{relu_backward, relu_forward, Scalar, Shape, Tensor};

/// Structural hyperparameters: `num_modules` modules of `pairs_per_module`
/// pre-activation/convolution pairs at `channels` width, plus a final
/// convolution back to `in_channels`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// 1 for grayscale, 3 for color.
    pub in_channels: usize,
    /// Number of identity-mapping modules (M).
    pub num_modules: usize,
    /// ReLU+convolution pairs per module (L).
    pub pairs_per_module: usize,
    /// Feature channels of every internal convolution (C).
    pub channels: usize,
    /// Kernel side length; 3 in every supported configuration.
    pub kernel: usize,
    /// Per-pair dilation factors, length L. The per-pair zero padding equals
    /// `dilation * (kernel - 1) / 2`, which for kernel 3 is the dilation
    /// itself, so every layer preserves spatial size.
    pub dilation_schedule: Vec<usize>,
}

/// Default per-pair dilations for a module of `pairs` layers: 1 for the
/// first pair, 3 afterwards.
pub fn default_dilation_schedule(pairs: usize) -> Vec<usize> {
    (0..pairs).map(|i| if i == 0 { 1 } else { 3 }).collect()
}

impl NetworkConfig {
    /// Default single-channel configuration: M=3, L=6, C=64,
    /// dilations `[1,3,3,3,3,3]`.
    pub fn grayscale() -> Self {
        NetworkConfig::with_dims(1, 3, 6, 64)
    }

    /// Default three-channel configuration; identical to [`grayscale`]
    /// except that the first and last convolutions carry three channels.
    ///
    /// [`grayscale`]: NetworkConfig::grayscale
    pub fn color() -> Self {
        NetworkConfig::with_dims(3, 3, 6, 64)
    }

    /// Custom dimensions with the default dilation pattern.
    pub fn with_dims(
        in_channels: usize,
        num_modules: usize,
        pairs_per_module: usize,
        channels: usize,
    ) -> Self {
        NetworkConfig {
            in_channels,
            num_modules,
            pairs_per_module,
            channels,
            kernel: 3,
            dilation_schedule: default_dilation_schedule(pairs_per_module),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.in_channels != 1 && self.in_channels != 3 {
            return fail(format!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.num_modules == 0 || self.pairs_per_module == 0 || self.channels == 0 {
            return fail("num_modules, pairs_per_module and channels must be >= 1".into());
        }
        if self.kernel.is_multiple_of(2) || self.kernel == 0 {
            return fail(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.dilation_schedule.len() != self.pairs_per_module {
            return fail(format!(
                "dilation schedule has {} entries, expected {} (one per pair)",
                self.dilation_schedule.len(),
                self.pairs_per_module
            ));
        }
        if self.dilation_schedule.contains(&0) {
            return fail("dilations must be >= 1".into());
        }
        Ok(())
    }

    /// Per-pair zero padding; equals the dilation schedule for kernel 3.
    pub fn padding_schedule(&self) -> Vec<usize> {
        self.dilation_schedule
            .iter()
            .map(|d| d * (self.kernel - 1) / 2)
            .collect()
    }

    /// Total number of convolution layers, `M * L + 1`.
    pub fn conv_layer_count(&self) -> usize {
        self.num_modules * self.pairs_per_module + 1
    }

    /// Exact number of trainable values (weights plus biases) over all
    /// convolution layers.
    pub fn param_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let mut total = 0;
        for m in 0..self.num_modules {
            for l in 0..self.pairs_per_module {
                let in_ch = if m == 0 && l == 0 { self.in_channels } else { self.channels };
                total += self.channels * in_ch * k2 + self.channels;
            }
        }
        total += self.in_channels * self.channels * k2 + self.in_channels;
        total
    }

    /// Receptive field of one module's convolution chain.
    pub fn module_receptive_field(&self) -> usize {
        receptive_field(self.kernel, &self.dilation_schedule)
    }

    /// Receptive field of the whole network (all modules plus the final
    /// convolution).
    pub fn network_receptive_field(&self) -> usize {
        let mut dilations = Vec::with_capacity(self.conv_layer_count());
        for _ in 0..self.num_modules {
            dilations.extend_from_slice(&self.dilation_schedule);
        }
        dilations.push(1);
        receptive_field(self.kernel, &dilations)
    }

    /// Pixels on each side of an output position that can influence it.
    pub fn receptive_radius(&self) -> usize {
        (self.network_receptive_field() - 1) / 2
    }
}

/// Receptive field of a stride-1 convolution chain:
/// `1 + sum_l (kernel - 1) * dilation_l`. The number of layers is the length
/// of `dilations`.
pub fn receptive_field(kernel: usize, dilations: &[usize]) -> usize {
    1 + dilations.iter().map(|d| (kernel - 1) * d).sum::<usize>()
}

/// The full weight set: `num_modules` lists of per-pair convolutions plus
/// the final noise-prediction convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct CimmNetwork<T = f32> {
    config: NetworkConfig,
    modules: Vec<Vec<ConvParams<T>>>,
    final_conv: ConvParams<T>,
}

/// Outputs of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T = f32> {
    /// Predicted noise component, same shape as the input.
    pub noise_estimate: Tensor<T>,
    /// `input - noise_estimate`.
    pub denoised: Tensor<T>,
}

/// Activations recorded during a training-mode forward pass; everything the
/// backward pass needs, with no recomputation.
#[derive(Clone, Debug)]
pub struct ActivationCache<T = f32> {
    config: NetworkConfig,
    input_shape: Shape,
    /// pre_act[m][l]: tensor fed into the ReLU of pair (m, l).
    pre_act: Vec<Vec<Tensor<T>>>,
    /// post_act[m][l]: ReLU output of pair (m, l), i.e. the convolution input.
    post_act: Vec<Vec<Tensor<T>>>,
    /// First-pair convolution output of each module (the skip tensor).
    skip: Vec<Tensor<T>>,
    /// Output of the module chain; input to the final convolution.
    chain_output: Tensor<T>,
}

impl<T: Scalar> ActivationCache<T> {
    pub fn skip(&self, module: usize) -> &Tensor<T> {
        &self.skip[module]
    }

    pub fn chain_output(&self) -> &Tensor<T> {
        &self.chain_output
    }
}

/// Per-layer weight and bias gradients.
#[derive(Clone, Debug)]
pub struct LayerGrads<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Gradients of a scalar loss with respect to every parameter and to the
/// network input.
#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    /// `grads.modules[m][l]` matches `net.pair(m, l)`.
    pub modules: Vec<Vec<LayerGrads<T>>>,
    pub final_conv: LayerGrads<T>,
    /// d loss / d input (includes the direct path through the residual
    /// subtraction).
    pub input: Tensor<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Per-layer gradients in declaration order (modules first, final conv
    /// last); mirrors [`CimmNetwork::layers`].
    pub fn layers(&self) -> impl Iterator<Item = &LayerGrads<T>> {
        self.modules
            .iter()
            .flat_map(|m| m.iter())
            .chain(std::iter::once(&self.final_conv))
    }
}

impl<T: Scalar> CimmNetwork<T> {
    /// Builds a network with weights drawn from a zero-mean Gaussian of
    /// standard deviation `sqrt(2 / fan_in)` and zero biases. Deterministic
    /// for a given seed.
    #[allow(clippy::needless_range_loop)]
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let padding = config.padding_schedule();
        let mut modules = Vec::with_capacity(config.num_modules);
        for m in 0..config.num_modules {
            let mut pairs = Vec::with_capacity(config.pairs_per_module);
            for l in 0..config.pairs_per_module {
                let in_ch = if m == 0 && l == 0 { config.in_channels } else { config.channels };
                pairs.push(init_layer(
                    &mut rng,
                    config.channels,
                    in_ch,
                    config.kernel,
                    config.dilation_schedule[l],
                    padding[l],
                )?);
            }
            modules.push(pairs);
        }
        let final_conv = init_layer(
            &mut rng,
            config.in_channels,
            config.channels,
            config.kernel,
            1,
            (config.kernel - 1) / 2,
        )?;
        Ok(CimmNetwork {
            config: config.clone(),
            modules,
            final_conv,
        })
    }

    /// All-zero weights and biases; the resulting network predicts zero
    /// noise, so denoising is the identity.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        let mut net = CimmNetwork::init(config, 0)?;
        for layer in net.layers_mut() {
            layer.weights_mut().data_mut().fill(T::zero());
            layer.bias_mut().fill(T::zero());
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn pair(&self, module: usize, pair: usize) -> &ConvParams<T> {
        &self.modules[module][pair]
    }

    pub fn pair_mut(&mut self, module: usize, pair: usize) -> &mut ConvParams<T> {
        &mut self.modules[module][pair]
    }

    pub fn final_conv(&self) -> &ConvParams<T> {
        &self.final_conv
    }

    pub fn final_conv_mut(&mut self) -> &mut ConvParams<T> {
        &mut self.final_conv
    }

    /// Layers in declaration order: module by module, pair by pair, final
    /// convolution last.
    pub fn layers(&self) -> impl Iterator<Item = &ConvParams<T>> {
        self.modules
            .iter()
            .flat_map(|m| m.iter())
            .chain(std::iter::once(&self.final_conv))
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvParams<T>> {
        self.modules
            .iter_mut()
            .flat_map(|m| m.iter_mut())
            .chain(std::iter::once(&mut self.final_conv))
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> CimmNetwork<U> {
        CimmNetwork {
            config: self.config.clone(),
            modules: self
                .modules
                .iter()
                .map(|m| m.iter().map(|p| p.cast()).collect())
                .collect(),
            final_conv: self.final_conv.cast(),
        }
    }

    /// Inference forward pass.
    pub fn forward(&self, input: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.run_forward(input, None)
    }

    /// Forward pass that also records the activations needed by
    /// [`backward`](CimmNetwork::backward).
    pub fn forward_training(&self, input: &Tensor<T>) -> Result<(ForwardPass<T>, ActivationCache<T>)> {
        let mut cache = ActivationCache {
            config: self.config.clone(),
            input_shape: input.shape(),
            pre_act: vec![Vec::with_capacity(self.config.pairs_per_module); self.config.num_modules],
            post_act: vec![Vec::with_capacity(self.config.pairs_per_module); self.config.num_modules],
            skip: Vec::with_capacity(self.config.num_modules),
            chain_output: Tensor::zeros(input.shape()),
        };
        let pass = self.run_forward(input, Some(&mut cache))?;
        Ok((pass, cache))
    }

    fn run_forward(
        &self,
        input: &Tensor<T>,
        mut cache: Option<&mut ActivationCache<T>>,
    ) -> Result<ForwardPass<T>> {
        if input.shape().c != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: input.shape().c,
            });
        }
        let pairs = self.config.pairs_per_module;
        let mut chain = input.clone();
        for (m, module) in self.modules.iter().enumerate() {
            let first_act = relu_forward(&chain);
            let skip = conv2d_forward(&first_act, &module[0])?;
            if let Some(c) = cache.as_deref_mut() {
                c.pre_act[m].push(chain);
                c.post_act[m].push(first_act);
            }
            let mut residual = skip.clone();
            for layer in &module[1..pairs] {
                let act = relu_forward(&residual);
                let next = conv2d_forward(&act, layer)?;
                if let Some(c) = cache.as_deref_mut() {
                    c.pre_act[m].push(residual);
                    c.post_act[m].push(act);
                }
                residual = next;
            }
            chain = skip.add(&residual)?;
            if let Some(c) = cache.as_deref_mut() {
                c.skip.push(skip);
            }
        }
        let noise_estimate = conv2d_forward(&chain, &self.final_conv)?;
        if let Some(c) = cache {
            c.chain_output = chain;
        }
        let denoised = input.sub(&noise_estimate)?;
        Ok(ForwardPass {
            noise_estimate,
            denoised,
        })
    }

    /// Exact reverse-mode differentiation through the composition computed
    /// by `forward`. `grad_denoised` is `d loss / d denoised`; because
    /// `denoised = input - noise`, the gradient entering the noise branch is
    /// negated, and the direct path contributes `grad_denoised` itself to
    /// the input gradient.
    pub fn backward(
        &self,
        cache: &ActivationCache<T>,
        grad_denoised: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        if cache.config != self.config {
            return Err(Error::StaleCache(
                "cache was produced by a network with a different configuration".into(),
            ));
        }
        if grad_denoised.shape() != cache.input_shape {
            return Err(Error::shape(
                cache.input_shape.to_string(),
                grad_denoised.shape().to_string(),
            ));
        }
        let pairs = self.config.pairs_per_module;
        let grad_noise = grad_denoised.scale(-T::one());
        let fc = conv2d_backward(&cache.chain_output, &self.final_conv, &grad_noise)?;
        let final_grads = LayerGrads {
            weights: fc.weights,
            bias: fc.bias,
        };

        let mut module_grads: Vec<Vec<Option<LayerGrads<T>>>> =
            (0..self.config.num_modules).map(|_| (0..pairs).map(|_| None).collect()).collect();

        // Gradient with respect to the current module's output.
        let mut grad_out = fc.input;
        for (m, module) in self.modules.iter().enumerate().rev() {
            // Module output is skip + residual; both branches receive grad_out.
            let mut grad_skip = grad_out.clone();
            let mut grad_residual = grad_out;
            for l in (1..pairs).rev() {
                let g = conv2d_backward(&cache.post_act[m][l], &module[l], &grad_residual)?;
                module_grads[m][l] = Some(LayerGrads {
                    weights: g.weights,
                    bias: g.bias,
                });
                grad_residual = relu_backward(&cache.pre_act[m][l], &g.input)?;
            }
            // The residual chain starts at the skip tensor.
            grad_skip.add_assign(&grad_residual)?;
            let g = conv2d_backward(&cache.post_act[m][0], &module[0], &grad_skip)?;
            module_grads[m][0] = Some(LayerGrads {
                weights: g.weights,
                bias: g.bias,
            });
            grad_out = relu_backward(&cache.pre_act[m][0], &g.input)?;
        }

        let input = grad_denoised.add(&grad_out)?;
        Ok(Gradients {
            modules: module_grads
                .into_iter()
                .map(|m| m.into_iter().map(|g| g.expect("every pair visited")).collect())
                .collect(),
            final_conv: final_grads,
            input,
        })
    }
}

fn init_layer<T: Scalar>(
    rng: &mut ChaCha8Rng,
    out_channels: usize,
    in_channels: usize,
    kernel: usize,
    dilation: usize,
    padding: usize,
) -> Result<ConvParams<T>> {
    let fan_in = in_channels * kernel * kernel;
    let std = (2.0 / fan_in as f64).sqrt();
    let count = out_channels * in_channels * kernel * kernel;
    let data: Vec<T> = (0..count)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64(z * std)
        })
        .collect();
    let weights = Tensor::from_vec(Shape::new(out_channels, in_channels, kernel, kernel), data)?;
    ConvParams::new(weights, vec![T::zero(); out_channels], dilation, padding)
}
