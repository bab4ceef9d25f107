use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Param, Tensor, Var};
use crate::error::{contract, Error, Result};
use crate::nn::{BatchNorm, BnMode, Conv1d, ConvTranspose1d, Dense, LayerView};
use crate::rng::Rng;

use super::arch::ArchConfig;
use super::domain::ClassDomain;

/// Distribution of the generator noise `z`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    /// `N(0, 1)`
    #[default]
    StandardNormal,
    /// `N(-1, 1)`
    NormalMeanMinusOne,
    /// `U(-1, 1)`
    Uniform,
}

impl NoiseLaw {
    pub fn sample(self, rng: &mut Rng, rows: usize, dim: usize) -> Tensor {
        let data = (0..rows * dim)
            .map(|_| match self {
                NoiseLaw::StandardNormal => rng.sample::<f64, _>(StandardNormal),
                NoiseLaw::NormalMeanMinusOne => rng.sample::<f64, _>(StandardNormal) - 1.0,
                NoiseLaw::Uniform => rng.random_range(-1.0..1.0),
            })
            .collect();
        Tensor::new(vec![rows, dim], data).expect("rows * dim values")
    }
}

/// `dense -> reshape -> 2 x (transposed conv, stride 2) -> conv to length d -> tanh`,
/// ReLU between hidden layers.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    fc: Dense,
    up: [ConvTranspose1d; 2],
    out: Conv1d,
    norms: Option<[BatchNorm; 3]>,
    channels: [usize; 3],
    base_len: usize,
    bands: usize,
}

impl GeneratorNet {
    pub fn new(input_dim: usize, bands: usize, arch: &ArchConfig, rng: &mut Rng) -> Result<Self> {
        if bands == 0 {
            return Err(contract("generator needs d >= 1"));
        }
        let [c0, c1, c2] = arch.gen_channels;
        let base_len = bands.div_ceil(4);
        // Upsampled length 4 * base_len >= d; a valid conv trims it to d.
        let trim_kernel = 4 * base_len - bands + 1;
        let fc = Dense::new(input_dim, c0 * base_len, rng)?;
        let up = [
            ConvTranspose1d::new(c0, c1, 4, 2, 1, rng)?,
            ConvTranspose1d::new(c1, c2, 4, 2, 1, rng)?,
        ];
        let out = Conv1d::new(c2, 1, trim_kernel, 1, 0, rng)?;
        let norms = arch
            .gen_batchnorm
            .then(|| [BatchNorm::new(c0), BatchNorm::new(c1), BatchNorm::new(c2)]);
        Ok(Self {
            fc,
            up,
            out,
            norms,
            channels: arch.gen_channels,
            base_len,
            bands,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.fc.fan_in()
    }

    /// `input [B, in] -> [B, d]` in `(-1, 1)`. Batch norm falls back to eval
    /// mode for single-row batches.
    pub fn forward(&mut self, g: &mut Graph, input: Var, trainable: bool, bn: BnMode) -> Result<Var> {
        let batch = g.shape(input)[0];
        let bn = if batch < 2 { BnMode::Eval } else { bn };
        let h = self.fc.forward(g, input, trainable)?;
        let mut h = g.reshape(h, &[batch, self.channels[0], self.base_len])?;
        if let Some(norms) = &mut self.norms {
            h = norms[0].forward(g, h, bn, trainable)?;
        }
        h = g.relu(h)?;
        for (i, layer) in self.up.iter().enumerate() {
            h = layer.forward(g, h, trainable)?;
            if let Some(norms) = &mut self.norms {
                h = norms[i + 1].forward(g, h, bn, trainable)?;
            }
            h = g.relu(h)?;
        }
        let h = self.out.forward(g, h, trainable)?;
        let h = g.reshape(h, &[batch, self.bands])?;
        g.tanh(h)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.fc.params_mut();
        let [a, b] = &mut self.up;
        p.extend(a.params_mut());
        p.extend(b.params_mut());
        p.extend(self.out.params_mut());
        if let Some(norms) = &mut self.norms {
            for n in norms.iter_mut() {
                p.extend(n.params_mut());
            }
        }
        p
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        let mut v = vec![self.fc.view()];
        let norms = self.norms.as_ref();
        if let Some(n) = norms {
            v.push(n[0].view());
        }
        for i in 0..2 {
            v.push(self.up[i].view());
            if let Some(n) = norms {
                v.push(n[i + 1].view());
            }
        }
        v.push(self.out.view());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<Vec<&mut Tensor>> {
        let mut v = vec![self.fc.tensors_mut()];
        let [u0, u1] = &mut self.up;
        match &mut self.norms {
            Some([n0, n1, n2]) => {
                v.push(n0.tensors_mut());
                v.push(u0.tensors_mut());
                v.push(n1.tensors_mut());
                v.push(u1.tensors_mut());
                v.push(n2.tensors_mut());
            }
            None => {
                v.push(u0.tensors_mut());
                v.push(u1.tensors_mut());
            }
        }
        v.push(self.out.tensors_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// One generator per class, output clamped into that class's domain.
    Mixture,
    /// A single class-conditional generator with no domain constraint.
    Conditional,
}

/// The generator side of the game. Every generator sees `[z, one_hot(c)]`.
#[derive(Clone, Debug)]
pub struct GeneratorBank {
    kind: GeneratorKind,
    nets: Vec<GeneratorNet>,
    domains: Vec<ClassDomain>,
    noise_dim: usize,
    classes: usize,
    bands: usize,
}

impl GeneratorBank {
    pub fn new(
        kind: GeneratorKind,
        domains: Vec<ClassDomain>,
        bands: usize,
        noise_dim: usize,
        arch: &ArchConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let classes = domains.len();
        if classes == 0 || noise_dim == 0 {
            return Err(contract("generator bank needs N >= 1 and noise_dim >= 1"));
        }
        for (j, dom) in domains.iter().enumerate() {
            if dom.class_id != j || dom.lower.len() != bands {
                return Err(contract(format!("domain {j} does not match class {j} with d={bands}")));
            }
        }
        let count = match kind {
            GeneratorKind::Mixture => classes,
            GeneratorKind::Conditional => 1,
        };
        let nets = (0..count)
            .map(|_| GeneratorNet::new(noise_dim + classes, bands, arch, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            kind,
            nets,
            domains,
            noise_dim,
            classes,
            bands,
        })
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn domains(&self) -> &[ClassDomain] {
        &self.domains
    }

    pub fn nets(&self) -> &[GeneratorNet] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [GeneratorNet] {
        &mut self.nets
    }

    /// Index of the network that serves class `c`.
    pub fn net_for(&self, c: usize) -> usize {
        match self.kind {
            GeneratorKind::Mixture => c,
            GeneratorKind::Conditional => 0,
        }
    }

    fn conditioned_input(&self, z: &Tensor, rows: &[usize], classes: &[usize]) -> Tensor {
        let width = self.noise_dim + self.classes;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            data.extend_from_slice(z.row(r));
            let mut onehot = vec![0.0; self.classes];
            onehot[classes[r]] = 1.0;
            data.extend(onehot);
        }
        Tensor::new(vec![rows.len(), width], data).expect("conditioned rows")
    }

    /// Generate one labelled sample per row of `z [B, noise_dim]`.
    ///
    /// Returns the `[B, d]` output and the class of each output row. For a
    /// mixture bank the rows come out grouped by class (ascending, stable
    /// within a class) and each group is clamped into its class domain.
    pub fn generate_batch(
        &mut self,
        g: &mut Graph,
        z: &Tensor,
        classes: &[usize],
        trainable: bool,
        bn: BnMode,
    ) -> Result<(Var, Vec<usize>)> {
        if z.shape() != [classes.len(), self.noise_dim] || classes.is_empty() {
            return Err(Error::Dimension {
                op: "generate",
                lhs: z.shape().to_vec(),
                rhs: vec![classes.len(), self.noise_dim],
            });
        }
        if let Some(c) = classes.iter().find(|c| **c >= self.classes) {
            return Err(contract(format!("class {c} out of range for {} classes", self.classes)));
        }
        match self.kind {
            GeneratorKind::Conditional => {
                let rows: Vec<usize> = (0..classes.len()).collect();
                let input = g.constant(self.conditioned_input(z, &rows, classes));
                let out = self.nets[0].forward(g, input, trainable, bn)?;
                Ok((out, classes.to_vec()))
            }
            GeneratorKind::Mixture => {
                let mut parts = Vec::new();
                let mut labels = Vec::with_capacity(classes.len());
                for j in 0..self.classes {
                    let rows: Vec<usize> = (0..classes.len()).filter(|r| classes[*r] == j).collect();
                    if rows.is_empty() {
                        continue;
                    }
                    let input = g.constant(self.conditioned_input(z, &rows, classes));
                    let raw = self.nets[j].forward(g, input, trainable, bn)?;
                    let dom = &self.domains[j];
                    parts.push(g.clamp_box(raw, &dom.lower, &dom.upper)?);
                    labels.extend(std::iter::repeat_n(j, rows.len()));
                }
                let out = if parts.len() == 1 { parts[0] } else { g.concat(&parts, 0)? };
                Ok((out, labels))
            }
        }
    }

    /// One sample of class `c` from noise `z` (length `noise_dim`).
    pub fn generate(&mut self, z: &[f64], c: usize) -> Result<Vec<f64>> {
        if z.len() != self.noise_dim {
            return Err(Error::Dimension {
                op: "generate",
                lhs: vec![z.len()],
                rhs: vec![self.noise_dim],
            });
        }
        if c >= self.classes {
            return Err(contract(format!("class {c} out of range for {} classes", self.classes)));
        }
        let mut g = Graph::new();
        let z = Tensor::new(vec![1, self.noise_dim], z.to_vec())?;
        let (out, _) = self.generate_batch(&mut g, &z, &[c], false, BnMode::Eval)?;
        Ok(g.value(out).data().to_vec())
    }
}
