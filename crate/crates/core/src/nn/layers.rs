//! Layer kernels with explicit forward and backward passes.
//!
//! Batched entry points take activations laid out `[B, ...]` in a flat slice.
//! Convolutions are valid (no padding) cross-correlations lowered to a single
//! matrix product over an im2col buffer covering the whole batch.

use crate::error::{Error, Result};
use crate::nn::gemm::{gemm, Mat};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[filters, channels, kernel, kernel]`
    pub weight: Tensor,
    /// `[filters]`
    pub bias: Tensor,
    pub stride: usize,
}

/// Input columns saved by the forward pass, `[C*k*k, B*P]`.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f64>,
    batch: usize,
    in_shape: [usize; 3],
}

fn out_dim(size: usize, kernel: usize, stride: usize) -> usize {
    (size - kernel) / stride + 1
}

impl Conv2d {
    pub fn zeros(channels: usize, filters: usize, kernel: usize, stride: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros(&[filters, channels, kernel, kernel]),
            bias: Tensor::zeros(&[filters]),
            stride,
        }
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn check(&self) -> Result<()> {
        let s = self.weight.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(Error::shape("conv weight", &[s[0], s[1], s[2], s[2]], s));
        }
        self.bias.check_shape("conv bias", &[s[0]])?;
        if self.stride == 0 {
            return Err(Error::InvalidConfig("conv stride must be >= 1".into()));
        }
        Ok(())
    }

    /// `[C, H, W] -> [F, H', W']` with `H' = (H - k) / stride + 1`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        self.check()?;
        let k = self.kernel();
        match *input {
            [c, h, w] if c == self.channels() && h >= k && w >= k => Ok([
                self.filters(),
                out_dim(h, k, self.stride),
                out_dim(w, k, self.stride),
            ]),
            _ => Err(Error::shape(
                "conv input",
                &[self.channels(), k.max(1), k.max(1)],
                input,
            )),
        }
    }

    pub(crate) fn forward_batch(
        &self,
        input: &[f64],
        batch: usize,
        in_shape: [usize; 3],
    ) -> Result<(Vec<f64>, ConvCache)> {
        let [f, oh, ow] = self.output_shape(&in_shape)?;
        let [c, h, w] = in_shape;
        if input.len() != batch * c * h * w {
            return Err(Error::shape("conv batch", &[batch, c, h, w], &[input.len()]));
        }
        let k = self.kernel();
        let s = self.stride;
        let p = oh * ow;
        let rows = c * k * k;
        let ld = batch * p;
        let mut cols = vec![0.0; rows * ld];
        for b in 0..batch {
            let img = &input[b * c * h * w..(b + 1) * c * h * w];
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let r = (ci * k + ky) * k + kx;
                        let dst = &mut cols[r * ld + b * p..r * ld + (b + 1) * p];
                        for oy in 0..oh {
                            let src = &img[ci * h * w + (oy * s + ky) * w + kx..];
                            let row = &mut dst[oy * ow..(oy + 1) * ow];
                            for (ox, d) in row.iter_mut().enumerate() {
                                *d = src[ox * s];
                            }
                        }
                    }
                }
            }
        }
        let mut fp = vec![0.0; f * ld];
        gemm(
            Mat::new(self.weight.data(), f, rows),
            Mat::new(&cols, rows, ld),
            0.0,
            &mut fp,
        );
        let mut out = vec![0.0; batch * f * p];
        let bias = self.bias.data();
        for b in 0..batch {
            for fi in 0..f {
                let src = &fp[fi * ld + b * p..fi * ld + (b + 1) * p];
                let dst = &mut out[(b * f + fi) * p..(b * f + fi + 1) * p];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = v + bias[fi];
                }
            }
        }
        Ok((
            out,
            ConvCache {
                cols,
                batch,
                in_shape,
            },
        ))
    }

    /// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
    /// input gradient when `need_input` is set.
    pub(crate) fn backward_batch(
        &self,
        grad_out: &[f64],
        cache: &ConvCache,
        grad_w: &mut Tensor,
        grad_b: &mut Tensor,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let [f, oh, ow] = self.output_shape(&cache.in_shape)?;
        let [c, h, w] = cache.in_shape;
        let batch = cache.batch;
        let p = oh * ow;
        let ld = batch * p;
        let k = self.kernel();
        let s = self.stride;
        let rows = c * k * k;
        if grad_out.len() != batch * f * p {
            return Err(Error::shape("conv grad_out", &[batch, f, oh, ow], &[grad_out.len()]));
        }
        grad_w.check_shape("conv grad_w", self.weight.shape())?;
        grad_b.check_shape("conv grad_b", self.bias.shape())?;

        let mut fp = vec![0.0; f * ld];
        let gb = grad_b.data_mut();
        for b in 0..batch {
            for fi in 0..f {
                let src = &grad_out[(b * f + fi) * p..(b * f + fi + 1) * p];
                fp[fi * ld + b * p..fi * ld + (b + 1) * p].copy_from_slice(src);
                gb[fi] += src.iter().sum::<f64>();
            }
        }
        gemm(
            Mat::new(&fp, f, ld),
            Mat::new(&cache.cols, rows, ld).t(),
            1.0,
            grad_w.data_mut(),
        );
        if !need_input {
            return Ok(None);
        }
        let mut gcols = vec![0.0; rows * ld];
        gemm(
            Mat::new(self.weight.data(), f, rows).t(),
            Mat::new(&fp, f, ld),
            0.0,
            &mut gcols,
        );
        let mut grad_in = vec![0.0; batch * c * h * w];
        for b in 0..batch {
            let img = &mut grad_in[b * c * h * w..(b + 1) * c * h * w];
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let r = (ci * k + ky) * k + kx;
                        let src = &gcols[r * ld + b * p..r * ld + (b + 1) * p];
                        for oy in 0..oh {
                            let base = ci * h * w + (oy * s + ky) * w + kx;
                            for ox in 0..ow {
                                img[base + ox * s] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Ok(Some(grad_in))
    }
}

/// Single-sample valid convolution, `[C, H, W] -> [F, H', W']`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let layer = Conv2d {
        weight: weights.clone(),
        bias: bias.clone(),
        stride,
    };
    let in_shape: [usize; 3] = input
        .shape()
        .try_into()
        .map_err(|_| Error::shape("conv input", &[0, 0, 0], input.shape()))?;
    let out_shape = layer.output_shape(&in_shape)?;
    let (out, _) = layer.forward_batch(input.data(), 1, in_shape)?;
    Tensor::new(out_shape.to_vec(), out)
}

/// Gradients of [`conv2d_forward`]: `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    grad_out: &Tensor,
    cached_input: &Tensor,
    weights: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let filters = weights.shape().first().copied().unwrap_or(0);
    let layer = Conv2d {
        weight: weights.clone(),
        bias: Tensor::zeros(&[filters.max(1)]),
        stride,
    };
    let in_shape: [usize; 3] = cached_input
        .shape()
        .try_into()
        .map_err(|_| Error::shape("conv input", &[0, 0, 0], cached_input.shape()))?;
    let out_shape = layer.output_shape(&in_shape)?;
    grad_out.check_shape("conv grad_out", &out_shape)?;
    let (_, cache) = layer.forward_batch(cached_input.data(), 1, in_shape)?;
    let mut gw = Tensor::zeros_like(weights);
    let mut gb = Tensor::zeros(&[filters]);
    let gi = layer
        .backward_batch(grad_out.data(), &cache, &mut gw, &mut gb, true)?
        .expect("input gradient requested");
    Ok((Tensor::new(in_shape.to_vec(), gi)?, gw, gb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[outputs, inputs]`
    pub weight: Tensor,
    /// `[outputs]`
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn check(&self) -> Result<()> {
        if self.weight.shape().len() != 2 {
            return Err(Error::shape("dense weight", &[0, 0], self.weight.shape()));
        }
        self.bias.check_shape("dense bias", &[self.outputs()])
    }

    pub(crate) fn forward_batch(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check()?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if input.len() != batch * n_in {
            return Err(Error::shape("dense input", &[batch, n_in], &[input.len()]));
        }
        let mut out = vec![0.0; batch * n_out];
        gemm(
            Mat::new(input, batch, n_in),
            Mat::new(self.weight.data(), n_out, n_in).t(),
            0.0,
            &mut out,
        );
        for row in out.chunks_exact_mut(n_out) {
            for (o, b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub(crate) fn backward_batch(
        &self,
        grad_out: &[f64],
        input: &[f64],
        batch: usize,
        grad_w: &mut Tensor,
        grad_b: &mut Tensor,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if grad_out.len() != batch * n_out || input.len() != batch * n_in {
            return Err(Error::shape("dense grad_out", &[batch, n_out], &[grad_out.len()]));
        }
        grad_w.check_shape("dense grad_w", self.weight.shape())?;
        grad_b.check_shape("dense grad_b", self.bias.shape())?;
        gemm(
            Mat::new(grad_out, batch, n_out).t(),
            Mat::new(input, batch, n_in),
            1.0,
            grad_w.data_mut(),
        );
        let gb = grad_b.data_mut();
        for row in grad_out.chunks_exact(n_out) {
            for (g, r) in gb.iter_mut().zip(row) {
                *g += r;
            }
        }
        if !need_input {
            return Ok(None);
        }
        let mut gi = vec![0.0; batch * n_in];
        gemm(
            Mat::new(grad_out, batch, n_out),
            Mat::new(self.weight.data(), n_out, n_in),
            0.0,
            &mut gi,
        );
        Ok(Some(gi))
    }
}

/// `y = W x + b` for a single input vector.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let layer = Dense {
        weight: weights.clone(),
        bias: bias.clone(),
    };
    layer.check()?;
    input.check_shape("dense input", &[layer.inputs()])?;
    Ok(Tensor::from_vec(layer.forward_batch(input.data(), 1)?))
}

/// Gradients of [`dense_forward`]: `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward(grad_out: &Tensor, cached_input: &Tensor, weights: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let outputs = weights.shape().first().copied().unwrap_or(0);
    let layer = Dense {
        weight: weights.clone(),
        bias: Tensor::zeros(&[outputs.max(1)]),
    };
    layer.check()?;
    grad_out.check_shape("dense grad_out", &[outputs])?;
    cached_input.check_shape("dense input", &[layer.inputs()])?;
    let mut gw = Tensor::zeros_like(weights);
    let mut gb = Tensor::zeros(&[outputs]);
    let gi = layer
        .backward_batch(grad_out.data(), cached_input.data(), 1, &mut gw, &mut gb, true)?
        .expect("input gradient requested");
    Ok((Tensor::from_vec(gi), gw, gb))
}

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

/// Subgradient 0 at the kink.
pub fn relu_backward(grad_out: &[f64], cached_input: &[f64]) -> Vec<f64> {
    grad_out
        .iter()
        .zip(cached_input)
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::shape("softmax", &[1], &[0]));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `log softmax(logits)[i]` without forming the probabilities.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&z| z - lse).collect())
}
