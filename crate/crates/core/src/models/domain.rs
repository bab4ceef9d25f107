use serde::{Deserialize, Serialize};

use crate::data::SpectralDataset;
use crate::error::{contract, Error, Result};

/// Per-band box occupied by one class's training samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDomain {
    pub class_id: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ClassDomain {
    pub fn new(class_id: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(contract("domain bounds differ in length"));
        }
        if let Some(b) = (0..lower.len()).find(|b| !(lower[*b] <= upper[*b])) {
            return Err(contract(format!("domain of class {class_id} has lower > upper at band {b}")));
        }
        Ok(Self { class_id, lower, upper })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Per-band clamp into the box.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// Per-class per-band min/max of `train`, each side widened by
/// `margin * (max - min)`.
pub fn compute_class_domains(train: &SpectralDataset, margin: f64) -> Result<Vec<ClassDomain>> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(contract(format!("domain margin must be >= 0, got {margin}")));
    }
    let d = train.bands();
    (0..train.classes())
        .map(|j| {
            let idx = train.indices_of(j);
            if idx.is_empty() {
                return Err(Error::MissingClass(j));
            }
            let mut lower = vec![f64::INFINITY; d];
            let mut upper = vec![f64::NEG_INFINITY; d];
            for i in idx {
                for (b, v) in train.sample(i).iter().enumerate() {
                    lower[b] = lower[b].min(*v);
                    upper[b] = upper[b].max(*v);
                }
            }
            for b in 0..d {
                let widen = margin * (upper[b] - lower[b]);
                lower[b] -= widen;
                upper[b] += widen;
            }
            ClassDomain::new(j, lower, upper)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_is_degenerate_box() {
        let ds = SpectralDataset::new(vec![0.3, -0.2, 5.0, 6.0], vec![0, 1], 2, 2).unwrap();
        let doms = compute_class_domains(&ds, 0.0).unwrap();
        assert_eq!(doms[0].lower, vec![0.3, -0.2]);
        assert_eq!(doms[0].upper, vec![0.3, -0.2]);
    }

    #[test]
    fn per_band_extrema() {
        let ds = SpectralDataset::new(vec![0.0, 1.0, 2.0, 3.0], vec![0, 0], 2, 1).unwrap();
        let doms = compute_class_domains(&ds, 0.0).unwrap();
        assert_eq!(doms[0].lower, vec![0.0, 1.0]);
        assert_eq!(doms[0].upper, vec![2.0, 3.0]);
    }

    #[test]
    fn margin_widens_both_sides() {
        let ds = SpectralDataset::new(vec![0.0, 2.0], vec![0, 0], 1, 1).unwrap();
        let doms = compute_class_domains(&ds, 0.05).unwrap();
        assert!((doms[0].lower[0] + 0.1).abs() < 1e-15);
        assert!((doms[0].upper[0] - 2.1).abs() < 1e-15);
    }

    #[test]
    fn empty_class_named() {
        let ds = SpectralDataset::new(vec![0.0, 2.0], vec![0, 0], 1, 3).unwrap();
        assert!(matches!(compute_class_domains(&ds, 0.0), Err(Error::MissingClass(1))));
    }
}
