//! A trainable image-denoising engine built around chains of
//! identity-mapping modules.
//!
//! The network stacks modules of pre-activation (ReLU + dilated convolution)
//! pairs. Inside each module the output of the first pair is added to the
//! output of the last, and modules feed each other directly; a final
//! convolution predicts the additive Gaussian noise, which is subtracted
//! from the input to produce the denoised image. The default configuration
//! (3 modules of 6 pairs at 64 channels, dilations 1,3,3,3,3,3) has 19
//! convolution layers and 628,993 parameters.
//!
//! Module map:
//! - [`tensor`] / [`conv`] / [`transform`] — dense NCHW tensors, the dilated
//!   convolution kernels with their exact adjoints, and the eight dihedral
//!   transforms.
//! - [`net`] — topology, He initialization, forward/backward, parameter and
//!   receptive-field calculators.
//! - [`train`] — the squared-error objective, Adam with decoupled weight
//!   decay, the halving learning-rate schedule, noise injection,
//!   augmentation, batch assembly and the epoch loop.
//! - [`data`] — PGM/PPM codecs (PNG behind the `png` feature), datasets,
//!   unit-scale conversion and random crops.
//! - [`metrics`] / [`eval`] — PSNR/SSIM, whole-image and tiled inference,
//!   geometric self-ensemble, dataset evaluation reports.
//! - [`checkpoint`] — the binary weight container (layout documented in the
//!   module).

pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod train;
pub mod transform;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use data::{from_unit, load_image, random_crop, save_image, to_unit, Dataset, ImageBuffer, Split};
pub use error::{Error, Result};
pub use eval::{
    denoise_image, denoise_image_tiled, denoise_image_with_limit, evaluate_dataset, self_ensemble,
    EvalOptions, EvalReport,
};
pub use metrics::{psnr, ssim};
pub use net::{receptive_field, ActivationCache, CimmNetwork, ForwardPass, Gradients, NetworkConfig};
pub use tensor::{relu_backward, relu_forward, Scalar, Shape, Tensor};
pub use train::{
    add_gaussian_noise, adam_step, augment, lr_schedule, make_batch, mse_loss, train_loop,
    AdamState, NoiseSpec, StepRecord, TrainCallback, TrainConfig,
};
