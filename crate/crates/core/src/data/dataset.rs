use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{contract, Error, Result};
use crate::losses::ClassPriors;

/// Per-band min/max used to map values to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn fit(ds: &SpectralDataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(contract("cannot fit normalisation on an empty dataset"));
        }
        let d = ds.bands();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in 0..ds.len() {
            for (b, v) in ds.sample(i).iter().enumerate() {
                min[b] = min[b].min(*v);
                max[b] = max[b].max(*v);
            }
        }
        Ok(Self { min, max })
    }

    /// Maps `[min, max]` onto `[-1, 1]`; constant bands map to 0.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    2.0 * (v - lo) / range - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v + 1.0) / 2.0 * (hi - lo) + lo)
            .collect()
    }
}

/// Labelled band vectors, row-major `M x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralDataset {
    samples: Vec<f64>,
    labels: Vec<usize>,
    bands: usize,
    classes: usize,
    normalization: Option<Normalization>,
}

impl SpectralDataset {
    /// Checks shapes and label range. Use [`SpectralDataset::check_all_classes`]
    /// where every class must be present (loaded files, training splits).
    pub fn new(samples: Vec<f64>, labels: Vec<usize>, bands: usize, classes: usize) -> Result<Self> {
        if bands == 0 || classes == 0 {
            return Err(Error::Data(format!("need d >= 1 and N >= 1, got d={bands}, N={classes}")));
        }
        if samples.len() != labels.len() * bands {
            return Err(Error::Dimension {
                op: "dataset",
                lhs: vec![labels.len(), bands],
                rhs: vec![samples.len()],
            });
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, y)| **y >= classes) {
            return Err(Error::Data(format!("label {y} of sample {i} out of range for N={classes}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite band value".into()));
        }
        Ok(Self {
            samples,
            labels,
            bands,
            classes,
            normalization: None,
        })
    }

    pub fn check_all_classes(&self) -> Result<()> {
        let counts = self.class_counts();
        match counts.iter().position(|c| *c == 0) {
            Some(j) => Err(Error::MissingClass(j)),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.bands..(i + 1) * self.bands]
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn with_normalization(mut self, n: Option<Normalization>) -> Self {
        self.normalization = n;
        self
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for y in &self.labels {
            counts[*y] += 1;
        }
        counts
    }

    /// Indices of the samples of class `j`, in order.
    pub fn indices_of(&self, j: usize) -> Vec<usize> {
        (0..self.len()).filter(|i| self.labels[*i] == j).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut samples = Vec::with_capacity(indices.len() * self.bands);
        for &i in indices {
            samples.extend_from_slice(self.sample(i));
        }
        Self {
            samples,
            labels: indices.iter().map(|i| self.labels[*i]).collect(),
            bands: self.bands,
            classes: self.classes,
            normalization: self.normalization.clone(),
        }
    }

    /// Rows `indices` as a `[len, d]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        Tensor::from_rows(indices.iter().map(|i| self.sample(*i)), self.bands).expect("rows have d bands")
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.bands], self.samples.clone()).expect("consistent shape")
    }

    /// Apply a normalisation record, which is kept on the result.
    pub fn normalized_with(&self, n: &Normalization) -> Result<Self> {
        if n.min.len() != self.bands {
            return Err(Error::Dimension {
                op: "normalize",
                lhs: vec![self.bands],
                rhs: vec![n.min.len()],
            });
        }
        let mut samples = Vec::with_capacity(self.samples.len());
        for i in 0..self.len() {
            samples.extend(n.apply(self.sample(i)));
        }
        Ok(Self {
            samples,
            labels: self.labels.clone(),
            bands: self.bands,
            classes: self.classes,
            normalization: Some(n.clone()),
        })
    }

    /// Fit min/max on `train`, apply to both. Test values may fall outside
    /// `[-1, 1]` when they exceed the training extremes.
    pub fn normalize_split(train: &Self, test: &Self) -> Result<(Self, Self)> {
        let n = Normalization::fit(train)?;
        Ok((train.normalized_with(&n)?, test.normalized_with(&n)?))
    }

    /// Undo the recorded normalisation.
    pub fn denormalized(&self) -> Result<Self> {
        let n = self
            .normalization
            .as_ref()
            .ok_or_else(|| contract("dataset carries no normalisation record"))?;
        let mut samples = Vec::with_capacity(self.samples.len());
        for i in 0..self.len() {
            samples.extend(n.invert(self.sample(i)));
        }
        Ok(Self {
            samples,
            labels: self.labels.clone(),
            bands: self.bands,
            classes: self.classes,
            normalization: None,
        })
    }
}

/// Empirical class frequencies of `train`; generated and classifier priors
/// are copies of the real priors.
pub fn class_priors(train: &SpectralDataset) -> Result<ClassPriors> {
    if train.is_empty() {
        return Err(contract("class priors of an empty dataset"));
    }
    let m = train.len() as f64;
    let real: Vec<f64> = train.class_counts().iter().map(|c| *c as f64 / m).collect();
    ClassPriors::new(real.clone(), real.clone(), real)
}
