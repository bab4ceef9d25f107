use crate::autodiff::{Graph, Param, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Conv1d, Dense, LayerView};
use crate::rng::Rng;

use super::arch::ArchConfig;

/// `conv -> LeakyReLU -> conv -> LeakyReLU -> dense`, then a sigmoid for a
/// single head or a softmax over `heads > 1` outputs.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: [Conv1d; 2],
    fc: Dense,
    heads: usize,
    slope: f64,
    bands: usize,
}

pub(crate) fn strided_len(len: usize, k: usize, stride: usize) -> usize {
    (len + 2 * (k / 2) - k) / stride + 1
}

impl Discriminator {
    pub fn new(bands: usize, heads: usize, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || bands == 0 {
            return Err(contract("discriminator needs d >= 1 and at least one head"));
        }
        let k = arch.disc_kernel;
        let [c0, c1] = arch.disc_channels;
        let convs = [
            Conv1d::new(1, c0, k, arch.stride, k / 2, rng)?,
            Conv1d::new(c0, c1, k, arch.stride, k / 2, rng)?,
        ];
        let len = strided_len(strided_len(bands, k, arch.stride), k, arch.stride);
        let fc = Dense::new(c1 * len, heads, rng)?;
        Ok(Self {
            convs,
            fc,
            heads,
            slope: arch.leaky_slope,
            bands,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `x [B, d] -> [B, heads]` probabilities.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.bands {
            return Err(Error::Dimension {
                op: "discriminate",
                lhs: shape,
                rhs: vec![self.bands],
            });
        }
        let batch = shape[0];
        let mut h = g.reshape(x, &[batch, 1, self.bands])?;
        for conv in &self.convs {
            h = conv.forward(g, h, trainable)?;
            h = g.leaky_relu(h, self.slope)?;
        }
        let flat = g.value(h).len() / batch;
        let h = g.reshape(h, &[batch, flat])?;
        let logits = self.fc.forward(g, h, trainable)?;
        if self.heads == 1 {
            g.sigmoid(logits)
        } else {
            g.softmax(logits)
        }
    }

    /// Probability that a single spectrum is real (single-head only).
    pub fn discriminate(&self, x: &[f64]) -> Result<f64> {
        if self.heads != 1 {
            return Err(contract("discriminate needs a single-head discriminator"));
        }
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let p = self.forward(&mut g, v, false)?;
        Ok(g.value(p).item())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let [a, b] = &mut self.convs;
        let mut p = a.params_mut();
        p.extend(b.params_mut());
        p.extend(self.fc.params_mut());
        p
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        vec![self.convs[0].view(), self.convs[1].view(), self.fc.view()]
    }

    pub fn tensors_mut(&mut self) -> Vec<Vec<&mut Tensor>> {
        let [a, b] = &mut self.convs;
        vec![a.tensors_mut(), b.tensors_mut(), self.fc.tensors_mut()]
    }

    pub fn output_layer_mut(&mut self) -> &mut Dense {
        &mut self.fc
    }
}
