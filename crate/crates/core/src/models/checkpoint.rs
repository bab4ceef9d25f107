//! Little-endian checkpoint layout:
//!
//! ```text
//! "MGSG" | version u32 | N u32 | d u32 | noise_dim u32
//! mode u8 | generator kind u8
//! gen_channels 3*u32 | disc_channels 2*u32 | disc_kernel u32 | cls_channels 2*u32
//! stride u32 | gen_batchnorm u8 | leaky_slope f64 | K u32 | cls_kernels K*u32
//! network count u32, then per network:
//!   role u8 (0 generator, 1 discriminator, 2 classifier) | layer count u32
//!   per layer: kind u8 | stride u32 | pad u32 | tensor count u32
//!     per tensor: ndim u32 | dims ndim*u32 | values f32
//! N domain boxes: lower d*f32 | upper d*f32
//! ```

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerView};
use crate::rng::seeded;

use super::arch::ArchConfig;
use super::domain::ClassDomain;
use super::gan::{GanMode, GanModel};
use super::generator::GeneratorKind;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MGSG";

const ROLE_GENERATOR: u8 = 0;
const ROLE_DISCRIMINATOR: u8 = 1;
const ROLE_CLASSIFIER: u8 = 2;

fn kind_tag(kind: GeneratorKind) -> u8 {
    match kind {
        GeneratorKind::Mixture => 0,
        GeneratorKind::Conditional => 1,
    }
}

fn networks(model: &GanModel) -> Vec<(u8, Vec<LayerView<'_>>)> {
    let mut v: Vec<_> = model
        .generators
        .nets()
        .iter()
        .map(|n| (ROLE_GENERATOR, n.layers()))
        .collect();
    v.push((ROLE_DISCRIMINATOR, model.discriminator.layers()));
    if let Some(c) = &model.classifier {
        v.push((ROLE_CLASSIFIER, c.layers()));
    }
    v
}

fn networks_mut(model: &mut GanModel) -> Vec<(u8, Vec<Vec<&mut Tensor>>)> {
    let mut v: Vec<_> = model
        .generators
        .nets_mut()
        .iter_mut()
        .map(|n| (ROLE_GENERATOR, n.tensors_mut()))
        .collect();
    v.push((ROLE_DISCRIMINATOR, model.discriminator.tensors_mut()));
    if let Some(c) = &mut model.classifier {
        v.push((ROLE_CLASSIFIER, c.tensors_mut()));
    }
    v
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("checkpoint field fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialise `model`. Weights and domain bounds are stored as `f32`.
pub fn checkpoint_bytes(model: &GanModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION as usize);
    w.u32(model.classes());
    w.u32(model.bands());
    w.u32(model.noise_dim());
    w.u8(model.mode.tag());
    w.u8(kind_tag(model.generators.kind()));
    let a = &model.arch;
    a.gen_channels.iter().for_each(|c| w.u32(*c));
    a.disc_channels.iter().for_each(|c| w.u32(*c));
    w.u32(a.disc_kernel);
    a.cls_channels.iter().for_each(|c| w.u32(*c));
    w.u32(a.stride);
    w.u8(a.gen_batchnorm as u8);
    w.f64(a.leaky_slope);
    w.u32(a.cls_kernels.len());
    a.cls_kernels.iter().for_each(|k| w.u32(*k));
    let nets = networks(model);
    w.u32(nets.len());
    for (role, layers) in &nets {
        w.u8(*role);
        w.u32(layers.len());
        for layer in layers {
            w.u8(layer.kind as u8);
            w.u32(layer.stride);
            w.u32(layer.pad);
            w.u32(layer.tensors.len());
            for t in &layer.tensors {
                w.u32(t.shape().len());
                t.shape().iter().for_each(|s| w.u32(*s));
                t.data().iter().for_each(|v| w.f32(*v));
            }
        }
    }
    for dom in model.generators.domains() {
        dom.lower.iter().for_each(|v| w.f32(*v));
        dom.upper.iter().for_each(|v| w.f32(*v));
    }
    w.0
}

pub fn write_checkpoint(model: &GanModel, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn format(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as f64)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| format("tensor too large"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }
}

struct LayerBlob {
    kind: u8,
    tensors: Vec<Tensor>,
}

/// Rebuild a model from checkpoint bytes, validating every layer against
/// the architecture recorded in the header.
pub fn model_from_bytes(bytes: &[u8]) -> Result<GanModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format(format!("unsupported checkpoint version {version}")));
    }
    let (classes, bands, noise_dim) = (r.u32()?, r.u32()?, r.u32()?);
    let mode_tag = r.u8()?;
    let mode = GanMode::from_tag(mode_tag).ok_or_else(|| format(format!("unknown mode tag {mode_tag}")))?;
    let kind = r.u8()?;
    if kind != kind_tag(mode.generator_kind()) {
        return Err(format(format!("generator kind {kind} does not match mode {mode}")));
    }
    let gen_channels = [r.u32()?, r.u32()?, r.u32()?];
    let disc_channels = [r.u32()?, r.u32()?];
    let disc_kernel = r.u32()?;
    let cls_channels = [r.u32()?, r.u32()?];
    let stride = r.u32()?;
    let gen_batchnorm = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(format(format!("bad batchnorm flag {other}"))),
    };
    let leaky_slope = r.f64()?;
    let k = r.u32()?;
    if k > 64 {
        return Err(format(format!("implausible branch count {k}")));
    }
    let cls_kernels = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let arch = ArchConfig {
        gen_channels,
        disc_channels,
        disc_kernel,
        cls_channels,
        cls_kernels,
        stride,
        leaky_slope,
        gen_batchnorm,
    };

    let net_count = r.u32()?;
    let mut blobs = Vec::new();
    for _ in 0..net_count {
        let role = r.u8()?;
        let layer_count = r.u32()?;
        let mut layers = Vec::new();
        for _ in 0..layer_count {
            let kind = r.u8()?;
            let _stride = r.u32()?;
            let _pad = r.u32()?;
            let tensor_count = r.u32()?;
            let mut tensors = Vec::new();
            for _ in 0..tensor_count {
                let ndim = r.u32()?;
                if ndim > 8 {
                    return Err(format(format!("implausible tensor rank {ndim}")));
                }
                let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                let len = dims
                    .iter()
                    .try_fold(1usize, |a, d| a.checked_mul(*d))
                    .ok_or_else(|| format("tensor too large"))?;
                let data = r.f32s(len)?;
                tensors.push(Tensor::new(dims, data)?);
            }
            layers.push(LayerBlob { kind, tensors });
        }
        blobs.push((role, layers));
    }
    let mut domains = Vec::with_capacity(classes);
    for j in 0..classes {
        let lower = (0..bands).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let upper = (0..bands).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        domains.push(ClassDomain::new(j, lower, upper).map_err(|e| format(e.to_string()))?);
    }
    if r.pos != bytes.len() {
        return Err(format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut model = GanModel::new(mode, domains, bands, noise_dim, &arch, &mut seeded(0, 0))
        .map_err(|e| format(format!("invalid header: {e}")))?;
    let targets = networks_mut(&mut model);
    if targets.len() != blobs.len() {
        return Err(format(format!("expected {} networks, found {}", targets.len(), blobs.len())));
    }
    for (n, ((role, layers), (blob_role, blob_layers))) in targets.into_iter().zip(blobs).enumerate() {
        if role != blob_role || layers.len() != blob_layers.len() {
            return Err(format(format!("network {n} does not match the header architecture")));
        }
        for (l, (slots, blob)) in layers.into_iter().zip(blob_layers).enumerate() {
            if LayerKind::from_tag(blob.kind).is_none() {
                return Err(format(format!("network {n} layer {l}: unknown layer tag {}", blob.kind)));
            }
            if slots.len() != blob.tensors.len() {
                return Err(format(format!("network {n} layer {l}: wrong tensor count")));
            }
            for (slot, t) in slots.into_iter().zip(blob.tensors) {
                if slot.shape() != t.shape() {
                    return Err(format(format!(
                        "network {n} layer {l}: shape {:?} where {:?} expected",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t;
            }
        }
    }
    // Layer kinds, strides and pads must match what the header rebuilds.
    if checkpoint_bytes(&model) != bytes {
        return Err(format("layer table does not match the header architecture"));
    }
    Ok(model)
}

pub fn read_checkpoint(path: &Path) -> Result<GanModel> {
    model_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(mode: GanMode, bn: bool) -> GanModel {
        let domains = (0..2)
            .map(|j| ClassDomain::new(j, vec![-0.5 - j as f64; 7], vec![0.25; 7]).unwrap())
            .collect();
        let arch = ArchConfig {
            gen_batchnorm: bn,
            ..ArchConfig::tiny()
        };
        GanModel::new(mode, domains, 7, 3, &arch, &mut seeded(5, 1)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for mode in [GanMode::Mgsgan, GanMode::Acsgan, GanMode::Achsgan] {
            for bn in [false, true] {
                let bytes = checkpoint_bytes(&model(mode, bn));
                let loaded = model_from_bytes(&bytes).unwrap();
                assert_eq!(loaded.mode, mode);
                assert_eq!(checkpoint_bytes(&loaded), bytes);
            }
        }
    }

    #[test]
    fn loaded_weights_are_f32_rounded() {
        let m = model(GanMode::Mgsgan, false);
        let loaded = model_from_bytes(&checkpoint_bytes(&m)).unwrap();
        let a = m.discriminator.layers()[0].tensors[0].data().to_vec();
        let b = loaded.discriminator.layers()[0].tensors[0].data().to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = checkpoint_bytes(&model(GanMode::Acsgan, false));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(Error::Format(_))));
        let mut wrong_kind = bytes;
        wrong_kind[21] = 0;
        assert!(matches!(model_from_bytes(&wrong_kind), Err(Error::Format(_))));
    }
}
