use crate::autodiff::{Graph, Param, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{Conv1d, Dense, LayerView};
use crate::rng::Rng;

use super::arch::ArchConfig;
use super::discriminator::strided_len;

/// Parallel feature extractor: one two-layer conv branch per kernel size,
/// branch features concatenated, then a dense softmax over the classes.
#[derive(Clone, Debug)]
pub struct Classifier {
    branches: Vec<[Conv1d; 2]>,
    fc: Dense,
    classes: usize,
    slope: f64,
    bands: usize,
}

impl Classifier {
    pub fn new(bands: usize, classes: usize, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        if arch.cls_kernels.is_empty() || classes == 0 || bands == 0 {
            return Err(contract("classifier needs at least one branch, N >= 1 and d >= 1"));
        }
        let [c0, c1] = arch.cls_channels;
        let mut features = 0;
        let mut branches = Vec::with_capacity(arch.cls_kernels.len());
        for &k in &arch.cls_kernels {
            branches.push([
                Conv1d::new(1, c0, k, arch.stride, k / 2, rng)?,
                Conv1d::new(c0, c1, k, arch.stride, k / 2, rng)?,
            ]);
            features += c1 * strided_len(strided_len(bands, k, arch.stride), k, arch.stride);
        }
        let fc = Dense::new(features, classes, rng)?;
        Ok(Self {
            branches,
            fc,
            classes,
            slope: arch.leaky_slope,
            bands,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().flat_map(|l| l.tensors.iter().map(|t| t.len())).sum()
    }

    /// `x [B, d] -> [B, N]` class probabilities.
    pub fn forward(&self, g: &mut Graph, x: Var, trainable: bool) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.bands {
            return Err(Error::Dimension {
                op: "classify",
                lhs: shape,
                rhs: vec![self.bands],
            });
        }
        let batch = shape[0];
        let input = g.reshape(x, &[batch, 1, self.bands])?;
        let mut feats = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut h = input;
            for conv in branch {
                h = conv.forward(g, h, trainable)?;
                h = g.leaky_relu(h, self.slope)?;
            }
            let flat = g.value(h).len() / batch;
            feats.push(g.reshape(h, &[batch, flat])?);
        }
        let h = if feats.len() == 1 { feats[0] } else { g.concat(&feats, 1)? };
        let logits = self.fc.forward(g, h, trainable)?;
        g.softmax(logits)
    }

    pub fn classify(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let v = g.constant(Tensor::new(vec![1, x.len()], x.to_vec())?);
        let p = self.forward(&mut g, v, false)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = Vec::new();
        for [a, b] in &mut self.branches {
            p.extend(a.params_mut());
            p.extend(b.params_mut());
        }
        p.extend(self.fc.params_mut());
        p
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        let mut v: Vec<LayerView<'_>> = self.branches.iter().flat_map(|[a, b]| [a.view(), b.view()]).collect();
        v.push(self.fc.view());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<Vec<&mut Tensor>> {
        let mut v = Vec::new();
        for [a, b] in &mut self.branches {
            v.push(a.tensors_mut());
            v.push(b.tensors_mut());
        }
        v.push(self.fc.tensors_mut());
        v
    }

    pub fn output_layer_mut(&mut self) -> &mut Dense {
        &mut self.fc
    }
}
