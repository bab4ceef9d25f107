use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{contract, Error, Result};
use crate::rng::Rng;

use super::arch::ArchConfig;
use super::classifier::Classifier;
use super::discriminator::Discriminator;
use super::domain::ClassDomain;
use super::generator::{GeneratorBank, GeneratorKind};

const PREDICT_CHUNK: usize = 256;

/// Which game is being played.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    /// Per-class generators projected into their class domains, plus D and C.
    #[default]
    Mgsgan,
    /// One conditional generator without domain projection, plus D and C.
    Acsgan,
    /// One conditional generator and a discriminator with `N + 1` outputs.
    Achsgan,
}

impl GanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GanMode::Mgsgan => "mgsgan",
            GanMode::Acsgan => "acsgan",
            GanMode::Achsgan => "achsgan",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            GanMode::Mgsgan => 0,
            GanMode::Acsgan => 1,
            GanMode::Achsgan => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(GanMode::Mgsgan),
            1 => Some(GanMode::Acsgan),
            2 => Some(GanMode::Achsgan),
            _ => None,
        }
    }

    pub fn generator_kind(self) -> GeneratorKind {
        match self {
            GanMode::Mgsgan => GeneratorKind::Mixture,
            GanMode::Acsgan | GanMode::Achsgan => GeneratorKind::Conditional,
        }
    }

    /// Whether the classifier is a separate player.
    pub fn has_classifier(self) -> bool {
        self != GanMode::Achsgan
    }
}

impl std::fmt::Display for GanMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mgsgan" => Ok(GanMode::Mgsgan),
            "acsgan" => Ok(GanMode::Acsgan),
            "achsgan" => Ok(GanMode::Achsgan),
            other => Err(contract(format!("unknown mode '{other}'"))),
        }
    }
}

/// All players of one run.
#[derive(Clone, Debug)]
pub struct GanModel {
    pub mode: GanMode,
    pub arch: ArchConfig,
    pub generators: GeneratorBank,
    pub discriminator: Discriminator,
    pub classifier: Option<Classifier>,
}

impl GanModel {
    /// Initialises G, then D, then C from `rng`.
    pub fn new(
        mode: GanMode,
        domains: Vec<ClassDomain>,
        bands: usize,
        noise_dim: usize,
        arch: &ArchConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let classes = domains.len();
        let generators = GeneratorBank::new(mode.generator_kind(), domains, bands, noise_dim, arch, rng)?;
        let heads = if mode == GanMode::Achsgan { classes + 1 } else { 1 };
        let discriminator = Discriminator::new(bands, heads, arch, rng)?;
        let classifier = if mode.has_classifier() {
            Some(Classifier::new(bands, classes, arch, rng)?)
        } else {
            None
        };
        Ok(Self {
            mode,
            arch: arch.clone(),
            generators,
            discriminator,
            classifier,
        })
    }

    pub fn classes(&self) -> usize {
        self.generators.classes()
    }

    pub fn bands(&self) -> usize {
        self.generators.bands()
    }

    pub fn noise_dim(&self) -> usize {
        self.generators.noise_dim()
    }

    /// Class probabilities `[B, N]` for `x [B, d]`. ACHSGAN renormalises the
    /// discriminator's first `N` outputs.
    pub fn class_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d) = (self.classes(), self.bands());
        if x.shape().len() != 2 || x.shape()[1] != d {
            return Err(Error::Dimension {
                op: "class_probabilities",
                lhs: x.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let rows = x.shape()[0];
        let mut out = Vec::with_capacity(rows * n);
        for start in (0..rows).step_by(PREDICT_CHUNK) {
            let end = (start + PREDICT_CHUNK).min(rows);
            let chunk = Tensor::new(vec![end - start, d], x.data()[start * d..end * d].to_vec())?;
            let mut g = Graph::new();
            let v = g.constant(chunk);
            match &self.classifier {
                Some(c) => {
                    let p = c.forward(&mut g, v, false)?;
                    out.extend_from_slice(g.value(p).data());
                }
                None => {
                    let p = self.discriminator.forward(&mut g, v, false)?;
                    for r in 0..end - start {
                        let row = &g.value(p).row(r)[..n];
                        let total: f64 = row.iter().sum();
                        out.extend(row.iter().map(|v| v / total));
                    }
                }
            }
        }
        Tensor::new(vec![rows, n], out)
    }

    /// Arg-max class for each row of `x [B, d]`.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.class_probabilities(x)?;
        let n = self.classes();
        Ok((0..p.shape()[0])
            .map(|r| {
                let row = p.row(r);
                (0..n).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }
}
