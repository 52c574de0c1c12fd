//! Hand-written layer kernels with explicit backward passes.
//!
//! Images and feature maps are stored row-major as `[y][x][channel]`.
//! Convolution kernels are `[out][in][ky][kx]`, dense weights `[out][in]`.

/// 2-D convolution, square odd kernel, stride 1, zero "same" padding.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn output_len(&self) -> usize {
        self.height * self.width * self.out_channels
    }

    pub fn forward(&self, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let Conv2d {
            height: h,
            width: w,
            in_channels: ci,
            out_channels: co,
            kernel: k,
        } = *self;
        debug_assert_eq!(input.len(), h * w * ci);
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; h * w * co];
        for y in 0..h {
            for x in 0..w {
                let o_base = (y * w + x) * co;
                out[o_base..o_base + co].copy_from_slice(bias);
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let i_base = (sy as usize * w + sx as usize) * ci;
                        let src = &input[i_base..i_base + ci];
                        for o in 0..co {
                            let w_base = ((o * ci) * k + ky) * k + kx;
                            let mut acc = 0.0;
                            for (i, s) in src.iter().enumerate() {
                                acc += s * weight[w_base + i * k * k];
                            }
                            out[o_base + o] += acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        input: &[f64],
        weight: &[f64],
        grad_out: &[f64],
        grad_weight: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Vec<f64> {
        let Conv2d {
            height: h,
            width: w,
            in_channels: ci,
            out_channels: co,
            kernel: k,
        } = *self;
        let pad = (k / 2) as isize;
        let mut grad_in = vec![0.0; h * w * ci];
        for y in 0..h {
            for x in 0..w {
                let o_base = (y * w + x) * co;
                let go = &grad_out[o_base..o_base + co];
                for (gb, g) in grad_bias.iter_mut().zip(go) {
                    *gb += g;
                }
                for ky in 0..k {
                    let sy = y as isize + ky as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let sx = x as isize + kx as isize - pad;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let i_base = (sy as usize * w + sx as usize) * ci;
                        for (o, g) in go.iter().enumerate() {
                            if *g == 0.0 {
                                continue;
                            }
                            let w_base = ((o * ci) * k + ky) * k + kx;
                            for i in 0..ci {
                                grad_weight[w_base + i * k * k] += g * input[i_base + i];
                                grad_in[i_base + i] += g * weight[w_base + i * k * k];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// 2×2 average pooling with stride 2 (odd trailing rows/cols dropped).
pub fn avg_pool2(input: &[f64], h: usize, w: usize, c: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = ((2 * y + dy) * w + 2 * x + dx) * c;
                    let dst = (y * ow + x) * c;
                    for ch in 0..c {
                        out[dst + ch] += 0.25 * input[src + ch];
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn avg_pool2_backward(grad_out: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad_in = vec![0.0; h * w * c];
    for y in 0..oh {
        for x in 0..ow {
            let src = (y * ow + x) * c;
            for dy in 0..2 {
                for dx in 0..2 {
                    let dst = ((2 * y + dy) * w + 2 * x + dx) * c;
                    for ch in 0..c {
                        grad_in[dst + ch] += 0.25 * grad_out[src + ch];
                    }
                }
            }
        }
    }
    grad_in
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn dense(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| {
            b + weight[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(input)
                .map(|(w, x)| w * x)
                .sum::<f64>()
        })
        .collect()
}

/// Accumulates parameter gradients of [`dense`] and returns the input gradient.
pub fn dense_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n_in = input.len();
    let mut grad_in = vec![0.0; n_in];
    for (o, g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let grow = &mut grad_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * input[i];
            grad_in[i] += g * row[i];
        }
    }
    grad_in
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Gaussian init scaled by `1/sqrt(fan_in)`.
pub fn init_weights(rng: &mut crate::seed::Rng, len: usize, fan_in: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::seed;

    #[test]
    fn conv_gradients_match_finite_differences() {
        let conv = Conv2d {
            height: 5,
            width: 4,
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
        };
        let mut rng = seed::rng(3);
        let input = init_weights(&mut rng, 5 * 4 * 2, 1);
        let weight = init_weights(&mut rng, conv.weight_len(), 1);
        let bias = init_weights(&mut rng, 3, 1);
        let probe = init_weights(&mut rng, conv.output_len(), 1);
        let loss = |inp: &[f64], wt: &[f64]| {
            conv.forward(inp, wt, &bias)
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; 3];
        let gi = conv.backward(&input, &weight, &probe, &mut gw, &mut gb);
        let r = gradcheck::check(|w| loss(&input, w), &weight, &gw, 1e-5, 1e-8, None);
        assert!(r.passes(1e-7), "{r:?}");
        let r = gradcheck::check(|x| loss(x, &weight), &input, &gi, 1e-5, 1e-8, None);
        assert!(r.passes(1e-7), "{r:?}");
        let total: f64 = probe.iter().sum::<f64>();
        let per_channel: f64 = gb.iter().sum();
        assert!((total - per_channel).abs() < 1e-12);
    }

    #[test]
    fn pooling_backward_is_adjoint() {
        let mut rng = seed::rng(4);
        let x = init_weights(&mut rng, 4 * 6 * 2, 1);
        let (y, oh, ow) = avg_pool2(&x, 4, 6, 2);
        assert_eq!((oh, ow), (2, 3));
        let g = init_weights(&mut rng, y.len(), 1);
        let gx = avg_pool2_backward(&g, 4, 6, 2);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

/// Fully connected layer with parameters `[W (out x in) | b (out)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseHead {
    pub inputs: usize,
    pub outputs: usize,
    pub params: Vec<f64>,
}

impl DenseHead {
    pub fn new(inputs: usize, outputs: usize, rng: &mut crate::seed::Rng) -> Self {
        let mut params = init_weights(rng, inputs * outputs, inputs);
        params.extend(std::iter::repeat_n(0.0, outputs));
        Self {
            inputs,
            outputs,
            params,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            params: vec![0.0; inputs * outputs + outputs],
        }
    }

    pub fn from_params(inputs: usize, outputs: usize, params: Vec<f64>) -> crate::Result<Self> {
        if params.len() != inputs * outputs + outputs {
            return Err(crate::Error::DimensionMismatch {
                context: "dense head parameters",
                expected: inputs * outputs + outputs,
                actual: params.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            params,
        })
    }

    pub fn weight(&self) -> &[f64] {
        &self.params[..self.inputs * self.outputs]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.inputs * self.outputs..]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        dense(x, self.weight(), self.bias())
    }

    /// Accumulates into `grad` (same layout as `params`), returns `dL/dx`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.inputs * self.outputs);
        dense_backward(x, self.weight(), grad_out, gw, gb)
    }
}
