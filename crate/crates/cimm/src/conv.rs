//! Dilated 2-D convolution, forward and backward.
//!
//! Stride is fixed at 1. Spatial size is preserved whenever
//! `padding = dilation * (kernel - 1) / 2`, which is the configuration the
//! whole network runs with (kernel 3, padding = dilation).
//!
//! The kernels copy the input into a zero-padded buffer once and then run
//! contiguous row loops over it, so the hot loops are bounds-check free and
//! vectorize. Accumulation order is fixed, which keeps single-threaded runs
//! bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Weights, bias and geometry of one convolution layer.
///
/// Weight layout is `(out_channels, in_channels, kernel_h, kernel_w)`; the
/// bias has one entry per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T = f32> {
    weights: Tensor<T>,
    bias: Vec<T>,
    dilation: usize,
    padding: usize,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>, dilation: usize, padding: usize) -> Result<Self> {
        let s = weights.shape();
        if bias.len() != s.n {
            return Err(Error::shape(
                format!("{} bias entries", s.n),
                format!("{}", bias.len()),
            ));
        }
        if s.h.is_multiple_of(2) || s.w.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "kernel must have odd extent, got {}x{}",
                s.h, s.w
            )));
        }
        if dilation == 0 {
            return Err(Error::InvalidConfig("dilation must be >= 1".into()));
        }
        Ok(ConvParams {
            weights,
            bias,
            dilation,
            padding,
        })
    }

    /// All-zero layer with the given geometry.
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self> {
        ConvParams::new(
            Tensor::zeros(Shape::new(out_channels, in_channels, kernel, kernel)),
            vec![T::zero(); out_channels],
            dilation,
            padding,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kernel_h(&self) -> usize {
        self.weights.shape().h
    }

    pub fn kernel_w(&self) -> usize {
        self.weights.shape().w
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Number of trainable values (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn cast<U: Scalar>(&self) -> ConvParams<U> {
        ConvParams {
            weights: self.weights.cast(),
            bias: self.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            dilation: self.dilation,
            padding: self.padding,
        }
    }

    /// Output spatial size for an `h x w` input, or an error when the kernel
    /// footprint exceeds the padded input.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span_h = self.dilation * (self.kernel_h() - 1);
        let span_w = self.dilation * (self.kernel_w() - 1);
        let h_out = (h + 2 * self.padding).saturating_sub(span_h);
        let w_out = (w + 2 * self.padding).saturating_sub(span_w);
        if h_out == 0 || w_out == 0 {
            return Err(Error::EmptyOutput {
                h,
                w,
                padding: self.padding,
                dilation: self.dilation,
                kernel: self.kernel_h(),
            });
        }
        Ok((h_out, w_out))
    }
}

/// Gradients produced by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Copies `input` into a zero-padded buffer with `p` rows/columns of border.
fn padded_input<T: Scalar>(input: &Tensor<T>, p: usize) -> (Vec<T>, usize, usize) {
    let s = input.shape();
    let hp = s.h + 2 * p;
    let wp = s.w + 2 * p;
    let mut out = vec![T::zero(); s.n * s.c * hp * wp];
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let base = (n * s.c + c) * hp * wp;
            for y in 0..s.h {
                let dst = base + (y + p) * wp + p;
                out[dst..dst + s.w].copy_from_slice(&src[y * s.w..(y + 1) * s.w]);
            }
        }
    }
    (out, hp, wp)
}

fn check_input_channels<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<()> {
    if input.shape().c != params.in_channels() {
        return Err(Error::shape(
            format!("{} input channels", params.in_channels()),
            format!("{}", input.shape().c),
        ));
    }
    Ok(())
}

/// Cross-correlation with dilation `d`, zero padding `p`, stride 1:
///
/// `out[n,o,y,x] = bias[o] + sum_{i,u,v} in_pad[n,i,y+d*u,x+d*v] * w[o,i,u,v]`
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, params: &ConvParams<T>) -> Result<Tensor<T>> {
    check_input_channels(input, params)?;
    let s = input.shape();
    let (h_out, w_out) = params.output_size(s.h, s.w)?;
    let (o_ch, i_ch) = (params.out_channels(), params.in_channels());
    let (kh, kw, d) = (params.kernel_h(), params.kernel_w(), params.dilation());

    let (padded, _hp, wp) = padded_input(input, params.padding());
    let plane_len = (s.h + 2 * params.padding()) * wp;
    let mut out = Tensor::zeros(Shape::new(s.n, o_ch, h_out, w_out));

    for n in 0..s.n {
        for o in 0..o_ch {
            let bias = params.bias[o];
            let out_plane = out.plane_mut(n, o);
            out_plane.iter_mut().for_each(|v| *v = bias);
            for i in 0..i_ch {
                let pad_plane = &padded[(n * i_ch + i) * plane_len..][..plane_len];
                for u in 0..kh {
                    for v in 0..kw {
                        let wgt = params.weights.at(o, i, u, v);
                        for y in 0..h_out {
                            let src = &pad_plane[(y + d * u) * wp + d * v..][..w_out];
                            let dst = &mut out_plane[y * w_out..][..w_out];
                            for (acc, &s_) in dst.iter_mut().zip(src) {
                                *acc += wgt * s_;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`conv2d_forward`]: given `d loss / d output`, returns
/// `d loss / d input`, `d loss / d weights` and `d loss / d bias`.
#[allow(clippy::needless_range_loop)] // indexed loop nest mirrors the sum
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &ConvParams<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    check_input_channels(input, params)?;
    let s = input.shape();
    let (h_out, w_out) = params.output_size(s.h, s.w)?;
    let expected = Shape::new(s.n, params.out_channels(), h_out, w_out);
    if grad_output.shape() != expected {
        return Err(Error::shape(expected.to_string(), grad_output.shape().to_string()));
    }
    let (o_ch, i_ch) = (params.out_channels(), params.in_channels());
    let (kh, kw, d, p) = (
        params.kernel_h(),
        params.kernel_w(),
        params.dilation(),
        params.padding(),
    );

    let (padded, hp, wp) = padded_input(input, p);
    let plane_len = hp * wp;
    let mut grad_padded = vec![T::zero(); s.n * i_ch * plane_len];
    let mut grad_weights = Tensor::zeros(params.weights.shape());
    let mut grad_bias = vec![T::zero(); o_ch];

    for n in 0..s.n {
        for o in 0..o_ch {
            let g_plane = grad_output.plane(n, o);
            grad_bias[o] += g_plane.iter().copied().sum();
            for i in 0..i_ch {
                let pad_plane = &padded[(n * i_ch + i) * plane_len..][..plane_len];
                let gp_base = (n * i_ch + i) * plane_len;
                for u in 0..kh {
                    for v in 0..kw {
                        let wgt = params.weights.at(o, i, u, v);
                        let mut acc = T::zero();
                        for y in 0..h_out {
                            let g_row = &g_plane[y * w_out..][..w_out];
                            let row_off = (y + d * u) * wp + d * v;
                            let p_row = &pad_plane[row_off..][..w_out];
                            for (&g, &x) in g_row.iter().zip(p_row) {
                                acc += g * x;
                            }
                            let gp_row = &mut grad_padded[gp_base + row_off..][..w_out];
                            for (gi, &g) in gp_row.iter_mut().zip(g_row) {
                                *gi += wgt * g;
                            }
                        }
                        *grad_weights.at_mut(o, i, u, v) += acc;
                    }
                }
            }
        }
    }

    // The adjoint of zero padding is cropping the interior.
    let mut grad_input = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..i_ch {
            let base = (n * i_ch + c) * plane_len;
            let dst = grad_input.plane_mut(n, c);
            for y in 0..s.h {
                let src = base + (y + p) * wp + p;
                dst[y * s.w..(y + 1) * s.w].copy_from_slice(&grad_padded[src..src + s.w]);
            }
        }
    }

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
