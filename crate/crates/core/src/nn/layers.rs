//! Layer forward/backward passes and the loss head.
//!
//! Conventions, fixed once and tested: convolutions are "valid" (no
//! padding); ReLU's derivative at exactly 0 is 0; max-pool ties route their
//! gradient to the first (lower) index; BCE is computed from the logit,
//! never from a clamped probability.

use super::{NnError, Scalar, Tensor};
use crate::rng::Rng;

fn kaiming_uniform<S: Scalar>(n: usize, fan_in: usize, rng: &mut Rng) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| S::cast_from(rng.uniform(-bound, bound))).collect()
}

/// Valid 1D convolution over a channels-by-time input.
///
/// `weights` has shape `[out_channels, in_channels, kernel_size]`;
/// out[o, t] = bias[o] + sum_{c,k} w[o,c,k] * in[c, t*stride + k].
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<S> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(weights: Tensor<S>, bias: Tensor<S>, stride: usize) -> Self {
        let shape = weights.shape().to_vec();
        assert_eq!(shape.len(), 3, "conv weights must be [out, in, k]");
        assert_eq!(bias.len(), shape[0], "bias length must equal out_channels");
        assert!(stride >= 1);
        Conv1d {
            out_channels: shape[0],
            in_channels: shape[1],
            kernel_size: shape[2],
            weights,
            bias,
            stride,
        }
    }

    /// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero bias.
    pub fn init(in_channels: usize, out_channels: usize, kernel_size: usize, rng: &mut Rng) -> Self {
        let fan_in = in_channels * kernel_size;
        let weights = Tensor::new(
            vec![out_channels, in_channels, kernel_size],
            kaiming_uniform(out_channels * in_channels * kernel_size, fan_in, rng),
        );
        Conv1d::new(weights, Tensor::zeros(vec![out_channels]), 1)
    }

    pub fn out_len(&self, t: usize) -> Option<usize> {
        if t < self.kernel_size {
            None
        } else {
            Some((t - self.kernel_size) / self.stride + 1)
        }
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<(usize, usize), NnError> {
        let shape = input.shape();
        if shape.len() != 2 || shape[0] != self.in_channels {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d expects [{}, T] input, got {shape:?}",
                self.in_channels
            )));
        }
        let t = shape[1];
        let t_out = self.out_len(t).ok_or(NnError::InputTooShort {
            needed: self.kernel_size,
            got: t,
        })?;
        Ok((t, t_out))
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        let (t, t_out) = self.check_input(input)?;
        let mut out = Tensor::zeros(vec![self.out_channels, t_out]);
        for o in 0..self.out_channels {
            out.row_mut(o).fill(self.bias.values()[o]);
        }
        let w = self.weights.values();
        for o in 0..self.out_channels {
            for c in 0..self.in_channels {
                let in_row = &input.values()[c * t..(c + 1) * t];
                let w_base = (o * self.in_channels + c) * self.kernel_size;
                for k in 0..self.kernel_size {
                    let wv = w[w_base + k];
                    let out_row = out.row_mut(o);
                    if self.stride == 1 {
                        for (ov, &iv) in out_row.iter_mut().zip(&in_row[k..k + t_out]) {
                            *ov += wv * iv;
                        }
                    } else {
                        for (ti, ov) in out_row.iter_mut().enumerate() {
                            *ov += wv * in_row[ti * self.stride + k];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact reverse-mode gradients of the forward formula.
    pub fn backward(
        &self,
        input: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), NnError> {
        let (t, t_out) = self.check_input(input)?;
        if grad_out.shape() != [self.out_channels, t_out] {
            return Err(NnError::ShapeMismatch(format!(
                "conv1d grad_out must be [{}, {t_out}], got {:?}",
                self.out_channels,
                grad_out.shape()
            )));
        }
        let mut grad_input = Tensor::zeros(vec![self.in_channels, t]);
        let mut grad_w = Tensor::zeros(self.weights.shape().to_vec());
        let mut grad_b = Tensor::zeros(vec![self.out_channels]);

        let w = self.weights.values();
        for o in 0..self.out_channels {
            let go_row = grad_out.row(o);
            grad_b.values_mut()[o] = go_row.iter().fold(S::zero(), |acc, &g| acc + g);
            for c in 0..self.in_channels {
                let in_row = &input.values()[c * t..(c + 1) * t];
                let w_base = (o * self.in_channels + c) * self.kernel_size;
                let gi_row = &mut grad_input.values_mut()[c * t..(c + 1) * t];
                for k in 0..self.kernel_size {
                    let wv = w[w_base + k];
                    let mut gw = S::zero();
                    if self.stride == 1 {
                        for (ti, &g) in go_row.iter().enumerate() {
                            gw += g * in_row[ti + k];
                            gi_row[ti + k] += g * wv;
                        }
                    } else {
                        for (ti, &g) in go_row.iter().enumerate() {
                            gw += g * in_row[ti * self.stride + k];
                            gi_row[ti * self.stride + k] += g * wv;
                        }
                    }
                    grad_w.values_mut()[w_base + k] = gw;
                }
            }
        }
        Ok((grad_input, grad_w, grad_b))
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Affine map y = W x + b with `weights` shaped `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<S: Scalar> Dense<S> {
    pub fn new(weights: Tensor<S>, bias: Tensor<S>) -> Self {
        let shape = weights.shape().to_vec();
        assert_eq!(shape.len(), 2, "dense weights must be [out, in]");
        assert_eq!(bias.len(), shape[0]);
        Dense {
            out_dim: shape[0],
            in_dim: shape[1],
            weights,
            bias,
        }
    }

    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weights = Tensor::new(
            vec![out_dim, in_dim],
            kaiming_uniform(out_dim * in_dim, in_dim, rng),
        );
        Dense::new(weights, Tensor::zeros(vec![out_dim]))
    }

    fn check_input(&self, input: &Tensor<S>) -> Result<(), NnError> {
        if input.shape() != [self.in_dim] {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects [{}] input, got {:?}",
                self.in_dim,
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>, NnError> {
        self.check_input(input)?;
        let x = input.values();
        let out: Vec<S> = (0..self.out_dim)
            .map(|o| {
                self.weights
                    .row(o)
                    .iter()
                    .zip(x)
                    .fold(self.bias.values()[o], |acc, (&w, &xi)| acc + w * xi)
            })
            .collect();
        Ok(Tensor::new(vec![self.out_dim], out))
    }

    pub fn backward(
        &self,
        input: &Tensor<S>,
        grad_out: &Tensor<S>,
    ) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), NnError> {
        self.check_input(input)?;
        if grad_out.shape() != [self.out_dim] {
            return Err(NnError::ShapeMismatch(format!(
                "dense grad_out must be [{}], got {:?}",
                self.out_dim,
                grad_out.shape()
            )));
        }
        let x = input.values();
        let go = grad_out.values();
        let mut grad_input = Tensor::zeros(vec![self.in_dim]);
        let mut grad_w = Tensor::zeros(vec![self.out_dim, self.in_dim]);
        for o in 0..self.out_dim {
            let g = go[o];
            let w_row = self.weights.row(o);
            let gw_row = grad_w.row_mut(o);
            for i in 0..self.in_dim {
                gw_row[i] = g * x[i];
            }
            for (gi, &w) in grad_input.values_mut().iter_mut().zip(w_row) {
                *gi += g * w;
            }
        }
        let grad_b = Tensor::new(vec![self.out_dim], go.to_vec());
        Ok((grad_input, grad_w, grad_b))
    }

    pub fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Width-2, stride-2 max pooling over time. Odd trailing elements are
/// dropped. Returns the pooled tensor and the flat input index chosen per
/// output element (ties pick the first index) for gradient routing.
pub fn maxpool1d<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>), NnError> {
    let shape = input.shape();
    if shape.len() != 2 {
        return Err(NnError::ShapeMismatch(format!(
            "maxpool1d expects [C, T], got {shape:?}"
        )));
    }
    let (channels, t) = (shape[0], shape[1]);
    if t < 2 {
        return Err(NnError::InputTooShort { needed: 2, got: t });
    }
    let t_out = t / 2;
    let mut out = Tensor::zeros(vec![channels, t_out]);
    let mut argmax = vec![0usize; channels * t_out];
    for c in 0..channels {
        let in_row = input.row(c);
        for ti in 0..t_out {
            let (a, b) = (in_row[2 * ti], in_row[2 * ti + 1]);
            let (v, idx) = if b > a { (b, 2 * ti + 1) } else { (a, 2 * ti) };
            out.values_mut()[c * t_out + ti] = v;
            argmax[c * t_out + ti] = c * t + idx;
        }
    }
    Ok((out, argmax))
}

pub fn maxpool1d_backward<S: Scalar>(
    argmax: &[usize],
    grad_out: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(NnError::ShapeMismatch(format!(
            "maxpool grad_out has {} elements, argmax {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad_input = Tensor::zeros(input_shape.to_vec());
    for (&idx, &g) in argmax.iter().zip(grad_out.values()) {
        grad_input.values_mut()[idx] += g;
    }
    Ok(grad_input)
}

/// Mean over the time axis: [C, T] -> [C].
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>, NnError> {
    let shape = input.shape();
    if shape.len() != 2 || shape[1] == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "global_avg_pool expects [C, T >= 1], got {shape:?}"
        )));
    }
    let t = shape[1];
    let inv_t = S::cast_from(1.0 / t as f64);
    let out: Vec<S> = (0..shape[0])
        .map(|c| input.row(c).iter().fold(S::zero(), |acc, &v| acc + v) * inv_t)
        .collect();
    Ok(Tensor::new(vec![shape[0]], out))
}

pub fn global_avg_pool_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>, NnError> {
    if input_shape.len() != 2 || grad_out.shape() != [input_shape[0]] {
        return Err(NnError::ShapeMismatch(format!(
            "global_avg_pool backward: grad {:?} vs input {input_shape:?}",
            grad_out.shape()
        )));
    }
    let t = input_shape[1];
    let inv_t = S::cast_from(1.0 / t as f64);
    let mut grad_input = Tensor::zeros(input_shape.to_vec());
    for c in 0..input_shape[0] {
        let g = grad_out.values()[c] * inv_t;
        grad_input.values_mut()[c * t..(c + 1) * t].fill(g);
    }
    Ok(grad_input)
}

/// Elementwise max(0, x).
pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
    out
}

/// relu'(x) is 1 for x > 0 and 0 otherwise, including at exactly 0.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>, NnError> {
    if input.shape() != grad_out.shape() {
        return Err(NnError::ShapeMismatch(format!(
            "relu backward: {:?} vs {:?}",
            input.shape(),
            grad_out.shape()
        )));
    }
    let values: Vec<S> = input
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Ok(Tensor::new(input.shape().to_vec(), values))
}

/// Numerically stable logistic function.
pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// Binary cross-entropy computed from the pre-sigmoid logit:
/// max(z, 0) - z*y + ln(1 + exp(-|z|)). Stable for any finite z.
pub fn bce_with_logits<S: Scalar>(logit: S, y: S) -> S {
    logit.max(S::zero()) - logit * y + (S::one() + (-logit.abs()).exp()).ln()
}

/// d(BCE)/d(logit) = sigmoid(z) - y.
pub fn bce_grad_logit<S: Scalar>(logit: S, y: S) -> S {
    sigmoid(logit) - y
}
