//! Generator layers and their inference kernels.
//!
//! Parameters are stored as `f32` (the on-disk precision); every kernel
//! widens to `f64` before multiplying, and activations stay in `f64`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output-element count above which transposed convolution fans out over
/// output channels. Each channel is computed identically either way.
const PARALLEL_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullyConnected {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `[out_features, in_features]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Fractionally-strided convolution. Weight layout is
/// `[in_channels, out_channels, kernel_h, kernel_w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransposedConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl TransposedConv {
    /// `(H − 1)·stride − 2·padding + k + output_padding`, per axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let axis = |n: usize, k: usize| -> Result<usize> {
            if n == 0 {
                return Err(Error::shape(
                    None,
                    "transposed conv input has a zero-sized axis",
                ));
            }
            let size =
                ((n - 1) * self.stride + k + self.output_padding) as i64 - 2 * self.padding as i64;
            if size <= 0 {
                return Err(Error::shape(
                    None,
                    format!("transposed conv output axis would be {size}"),
                ));
            }
            Ok(size as usize)
        };
        Ok((axis(h, self.kernel_h)?, axis(w, self.kernel_w)?))
    }

    fn check_hyper(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::shape(None, "stride must be >= 1"));
        }
        if self.output_padding >= self.stride {
            return Err(Error::shape(
                None,
                format!(
                    "output_padding {} must be < stride {}",
                    self.output_padding, self.stride
                ),
            ));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::shape(None, "kernel must be at least 1x1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormInfer {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f64,
}

impl BatchNormInfer {
    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Identity statistics: gamma 1, beta 0, mean 0, var 1.
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    FullyConnected(FullyConnected),
    TransposedConv(TransposedConv),
    BatchNormInfer(BatchNormInfer),
    Activation(Activation),
    Reshape { target_shape: Vec<usize> },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::FullyConnected(_) => "fully_connected",
            LayerSpec::TransposedConv(_) => "transposed_conv",
            LayerSpec::BatchNormInfer(_) => "batch_norm",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Shape this layer produces from `input`, after checking that the
    /// parameter arrays agree with the declared sizes.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let numel: usize = input.iter().product();
        match self {
            LayerSpec::FullyConnected(fc) => fc_output_shape(fc, input),
            LayerSpec::TransposedConv(tc) => tconv_output_shape(tc, input),
            LayerSpec::BatchNormInfer(bn) => {
                let c = bn.channels();
                check_len("beta", bn.beta.len(), c)?;
                check_len("running_mean", bn.running_mean.len(), c)?;
                check_len("running_var", bn.running_var.len(), c)?;
                if !(bn.epsilon > 0.0 && bn.epsilon.is_finite()) {
                    return Err(Error::validation(None, "batchnorm epsilon must be > 0"));
                }
                if bn.running_var.iter().any(|v| *v < 0.0) {
                    return Err(Error::validation(
                        None,
                        "batchnorm running_var must be >= 0",
                    ));
                }
                if input.first() != Some(&c) {
                    return Err(Error::shape(
                        None,
                        format!("batchnorm has {c} channels, input shape is {input:?}"),
                    ));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation(act) => {
                if let Activation::LeakyRelu { alpha } = act {
                    if !alpha.is_finite() {
                        return Err(Error::validation(None, "leaky relu alpha must be finite"));
                    }
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { target_shape } => {
                let target: usize = target_shape.iter().product();
                if target_shape.is_empty() || target != numel {
                    return Err(Error::shape(
                        None,
                        format!("cannot reshape {input:?} into {target_shape:?}"),
                    ));
                }
                Ok(target_shape.clone())
            }
        }
    }

    pub fn apply(&self, input: Tensor) -> Result<Tensor> {
        match self {
            LayerSpec::FullyConnected(fc) => fully_connected(&input, fc),
            LayerSpec::TransposedConv(tc) => conv_transpose(&input, tc),
            LayerSpec::BatchNormInfer(bn) => batchnorm_infer(&input, bn),
            LayerSpec::Activation(kind) => Ok(apply_activation(input, *kind)),
            LayerSpec::Reshape { target_shape } => input.reshape(target_shape.clone()),
        }
    }

    /// Every `f32` parameter array with its name, in on-disk order.
    pub fn parameters(&self) -> Vec<(&'static str, &[f32])> {
        match self {
            LayerSpec::FullyConnected(fc) => vec![("weights", &fc.weights), ("bias", &fc.bias)],
            LayerSpec::TransposedConv(tc) => vec![("weights", &tc.weights), ("bias", &tc.bias)],
            LayerSpec::BatchNormInfer(bn) => vec![
                ("gamma", &bn.gamma),
                ("beta", &bn.beta),
                ("running_mean", &bn.running_mean),
                ("running_var", &bn.running_var),
            ],
            LayerSpec::Activation(_) | LayerSpec::Reshape { .. } => Vec::new(),
        }
    }
}

fn fc_output_shape(fc: &FullyConnected, input: &[usize]) -> Result<Vec<usize>> {
    let numel: usize = input.iter().product();
    check_len(
        "weights",
        fc.weights.len(),
        fc.in_features * fc.out_features,
    )?;
    check_len("bias", fc.bias.len(), fc.out_features)?;
    if numel != fc.in_features {
        return Err(Error::shape(
            None,
            format!(
                "fully connected expects {} inputs, got shape {input:?}",
                fc.in_features
            ),
        ));
    }
    Ok(vec![fc.out_features])
}

fn tconv_output_shape(tc: &TransposedConv, input: &[usize]) -> Result<Vec<usize>> {
    tc.check_hyper()?;
    check_len(
        "weights",
        tc.weights.len(),
        tc.in_channels * tc.out_channels * tc.kernel_h * tc.kernel_w,
    )?;
    check_len("bias", tc.bias.len(), tc.out_channels)?;
    let [c, h, w] = input[..] else {
        return Err(Error::shape(
            None,
            format!("transposed conv needs [C,H,W] input, got {input:?}"),
        ));
    };
    if c != tc.in_channels {
        return Err(Error::shape(
            None,
            format!(
                "transposed conv expects {} input channels, got {c}",
                tc.in_channels
            ),
        ));
    }
    let (oh, ow) = tc.output_hw(h, w)?;
    Ok(vec![tc.out_channels, oh, ow])
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::validation(
            None,
            format!("{what} has {got} values, expected {want}"),
        ));
    }
    Ok(())
}

/// `W·x + b` over the flattened input.
pub fn fully_connected(input: &Tensor, layer: &FullyConnected) -> Result<Tensor> {
    fc_output_shape(layer, input.shape())?;
    let x = input.data();
    let out = layer
        .weights
        .chunks_exact(layer.in_features)
        .zip(&layer.bias)
        .map(|(row, b)| {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| f64::from(*w) * v).sum();
            dot + f64::from(*b)
        })
        .collect();
    Ok(Tensor::from_vec(out))
}

/// Scatter-add transposed convolution: input element `(c, i, j)` adds
/// `x · W[c, o, :, :]` into the output window whose top-left corner is
/// `(i·stride − padding, j·stride − padding)`; bias is added last.
pub fn conv_transpose(input: &Tensor, layer: &TransposedConv) -> Result<Tensor> {
    let out_shape = tconv_output_shape(layer, input.shape())?;
    let (cin, h, w) = input.chw().expect("checked rank 3");
    let (cout, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = (layer.kernel_h, layer.kernel_w);
    let (stride, pad) = (layer.stride as isize, layer.padding as isize);
    let x = input.data();

    let fill_channel = |o: usize, plane: &mut [f64]| {
        for c in 0..cin {
            let kbase = (c * cout + o) * kh * kw;
            let kernel = &layer.weights[kbase..kbase + kh * kw];
            for i in 0..h {
                let row0 = i as isize * stride - pad;
                for j in 0..w {
                    let v = x[(c * h + i) * w + j];
                    if v == 0.0 {
                        continue;
                    }
                    let col0 = j as isize * stride - pad;
                    for a in 0..kh {
                        let r = row0 + a as isize;
                        if r < 0 || r >= oh as isize {
                            continue;
                        }
                        let out_row = &mut plane[r as usize * ow..(r as usize + 1) * ow];
                        let krow = &kernel[a * kw..(a + 1) * kw];
                        for (b, wv) in krow.iter().enumerate() {
                            let col = col0 + b as isize;
                            if col >= 0 && col < ow as isize {
                                out_row[col as usize] += v * f64::from(*wv);
                            }
                        }
                    }
                }
            }
        }
        let bias = f64::from(layer.bias[o]);
        for p in plane.iter_mut() {
            *p += bias;
        }
    };

    let mut out = vec![0.0; cout * oh * ow];
    let plane = oh * ow;
    if out.len() * cin >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(o, p)| fill_channel(o, p));
    } else {
        out.chunks_mut(plane)
            .enumerate()
            .for_each(|(o, p)| fill_channel(o, p));
    }
    Tensor::new(out_shape, out)
}

/// Per-channel `gamma·(x − mean)/sqrt(var + eps) + beta`; channel is axis 0.
///
/// Accepts `epsilon == 0` so unit-variance statistics can be checked
/// exactly; models reject it at validation.
pub fn batchnorm_infer(input: &Tensor, layer: &BatchNormInfer) -> Result<Tensor> {
    let c = layer.channels();
    if input.shape().first() != Some(&c)
        || layer.beta.len() != c
        || layer.running_mean.len() != c
        || layer.running_var.len() != c
    {
        return Err(Error::shape(
            None,
            format!(
                "batchnorm has {c} channels, input shape is {:?}",
                input.shape()
            ),
        ));
    }
    let per = input.len() / c;
    let mut out = input.clone();
    for (ch, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        let gamma = f64::from(layer.gamma[ch]);
        let beta = f64::from(layer.beta[ch]);
        let mean = f64::from(layer.running_mean[ch]);
        let denom = (f64::from(layer.running_var[ch]) + layer.epsilon).sqrt();
        for v in chunk {
            *v = gamma * (*v - mean) / denom + beta;
        }
    }
    Ok(out)
}

pub fn apply_activation(mut input: Tensor, kind: Activation) -> Tensor {
    let data = input.data_mut();
    match kind {
        Activation::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::LeakyRelu { alpha } => data.iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v *= alpha
            }
        }),
        Activation::Tanh => data.iter_mut().for_each(|v| *v = v.tanh()),
    }
    input
}
