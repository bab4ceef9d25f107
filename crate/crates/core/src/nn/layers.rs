use crate::autodiff::{Graph, Param, Tensor, Var};
use crate::error::{contract, Result};
use crate::rng::Rng;

use super::init::xavier_init;

/// Tag identifying a layer in the checkpoint layer table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum LayerKind {
    Dense = 1,
    Conv1d = 2,
    ConvTranspose1d = 3,
    BatchNorm = 4,
}

impl LayerKind {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Self::Dense),
            2 => Some(Self::Conv1d),
            3 => Some(Self::ConvTranspose1d),
            4 => Some(Self::BatchNorm),
            _ => None,
        }
    }
}

/// Read-only description of a layer for serialisation.
pub struct LayerView<'a> {
    pub kind: LayerKind,
    pub stride: usize,
    pub pad: usize,
    pub tensors: Vec<&'a Tensor>,
}

/// Fully connected layer, `x [B, in] -> [B, out]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            weight: Param::new(xavier_init(fan_in, fan_out, 1.0, &[fan_in, fan_out], rng)?),
            bias: Param::new(Tensor::zeros(&[fan_out])),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let w = g.param(&self.weight, trainable);
        let b = g.param(&self.bias, trainable);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView {
            kind: LayerKind::Dense,
            stride: 0,
            pad: 0,
            tensors: vec![&self.weight.value, &self.bias.value],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight.value, &mut self.bias.value]
    }
}

/// 1-D convolution with weights `[out, in, k]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
}

impl Conv1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(contract("conv1d needs positive kernel and stride"));
        }
        Ok(Self {
            weight: Param::new(xavier_init(c_in * k, c_out * k, 1.0, &[c_out, c_in, k], rng)?),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            pad,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.shape()[1] * self.kernel()
    }

    pub fn fan_out(&self) -> usize {
        self.out_channels() * self.kernel()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let w = g.param(&self.weight, trainable);
        let b = g.param(&self.bias, trainable);
        g.conv1d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView {
            kind: LayerKind::Conv1d,
            stride: self.stride,
            pad: self.pad,
            tensors: vec![&self.weight.value, &self.bias.value],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight.value, &mut self.bias.value]
    }
}

/// Transposed 1-D convolution with weights `[in, out, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose1d {
    pub fn new(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Result<Self> {
        if stride == 0 || k == 0 {
            return Err(contract("conv_transpose1d needs positive kernel and stride"));
        }
        Ok(Self {
            weight: Param::new(xavier_init(c_out * k, c_in * k, 1.0, &[c_in, c_out, k], rng)?),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            pad,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let w = g.param(&self.weight, trainable);
        let b = g.param(&self.bias, trainable);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView {
            kind: LayerKind::ConvTranspose1d,
            stride: self.stride,
            pad: self.pad,
            tensors: vec![&self.weight.value, &self.bias.value],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight.value, &mut self.bias.value]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Per-channel batch normalisation over `[B, C, ...]`.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// In train mode normalises with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the running
    /// estimates and leaves them untouched.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: BnMode, trainable: bool) -> Result<Var> {
        let gamma = g.param(&self.gamma, trainable);
        let beta = g.param(&self.beta, trainable);
        match mode {
            BnMode::Train => {
                let shape = g.shape(x).to_vec();
                let count = (shape[0] * shape[2..].iter().product::<usize>()) as f64;
                let (y, mean, var) = g.batch_norm(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                for (r, v) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - m) * *r + m * v;
                }
                let unbias = count / (count - 1.0);
                for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - m) * *r + m * v * unbias;
                }
                Ok(y)
            }
            BnMode::Eval => g.batch_norm_fixed(
                x,
                gamma,
                beta,
                self.running_mean.data(),
                self.running_var.data(),
                self.eps,
            ),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn view(&self) -> LayerView<'_> {
        LayerView {
            kind: LayerKind::BatchNorm,
            stride: 0,
            pad: 0,
            tensors: vec![&self.gamma.value, &self.beta.value, &self.running_mean, &self.running_var],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.gamma.value,
            &mut self.beta.value,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
