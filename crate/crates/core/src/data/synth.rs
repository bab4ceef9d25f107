use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::rng::{seeded, stream, Rng};

use super::dataset::SpectralDataset;

/// Parameters of the synthetic imbalanced spectra.
///
/// Class `j` has a template made of three Gaussian bumps on a constant
/// offset. Templates are pulled toward their common mean by `overlap`
/// (`0` keeps them apart, `1` makes them identical). A sample is its
/// template scaled by `1 + scale_jitter * sin(phi)`, `phi ~ U(0, 2 pi)`, plus
/// i.i.d. band noise `N(0, noise^2)`.
///
/// The arcsine-distributed scale puts most samples near the extremes, so a
/// modest training split already spans the class's range and per-band boxes
/// of the training samples cover held-out samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub classes: usize,
    pub bands: usize,
    pub sizes: Vec<usize>,
    pub overlap: f64,
    pub noise: f64,
    pub scale_jitter: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, bands: usize, sizes: Vec<usize>, overlap: f64) -> Self {
        Self {
            seed,
            classes: sizes.len(),
            bands,
            sizes,
            overlap,
            noise: 0.001,
            scale_jitter: 0.1,
        }
    }
}

fn bump_template(rng: &mut Rng, bands: usize, anchor: f64) -> Vec<f64> {
    let d = bands as f64;
    let mut bumps = Vec::with_capacity(3);
    // One bump is anchored per class so templates differ even for tiny N.
    bumps.push((rng.random_range(0.5..1.0), anchor, rng.random_range(d / 16.0..d / 8.0)));
    for _ in 0..2 {
        bumps.push((
            rng.random_range(0.2..0.8),
            rng.random_range(0.0..d),
            rng.random_range(d / 12.0..d / 5.0),
        ));
    }
    (0..bands)
        .map(|b| {
            let x = b as f64;
            0.5 + bumps
                .iter()
                .map(|(amp, c, w)| amp * (-0.5 * ((x - c) / w).powi(2)).exp())
                .sum::<f64>()
        })
        .collect()
}

/// Class templates after applying `overlap`.
pub(crate) fn templates(spec: &SynthSpec, rng: &mut Rng) -> Vec<Vec<f64>> {
    let d = spec.bands;
    let own: Vec<Vec<f64>> = (0..spec.classes)
        .map(|j| {
            let anchor = (j as f64 + 0.5) * d as f64 / spec.classes as f64;
            bump_template(rng, d, anchor)
        })
        .collect();
    let mean: Vec<f64> = (0..d)
        .map(|b| own.iter().map(|t| t[b]).sum::<f64>() / spec.classes as f64)
        .collect();
    own.iter()
        .map(|t| {
            t.iter()
                .zip(&mean)
                .map(|(v, m)| m + (1.0 - spec.overlap) * (v - m))
                .collect()
        })
        .collect()
}

pub fn make_synthetic(spec: &SynthSpec) -> Result<SpectralDataset> {
    if spec.classes == 0 || spec.bands == 0 || spec.sizes.len() != spec.classes {
        return Err(contract(format!(
            "synthetic spec needs N >= 1, d >= 1 and one size per class (N={}, {} sizes)",
            spec.classes,
            spec.sizes.len()
        )));
    }
    if spec.sizes.iter().any(|s| *s < 2) {
        return Err(contract("every synthetic class needs at least 2 samples"));
    }
    if !(0.0..=1.0).contains(&spec.overlap) {
        return Err(contract(format!("overlap must lie in [0, 1], got {}", spec.overlap)));
    }
    if !(spec.noise >= 0.0 && spec.scale_jitter >= 0.0 && spec.scale_jitter < 1.0) {
        return Err(contract("noise must be >= 0 and scale jitter in [0, 1)"));
    }
    let mut rng = seeded(spec.seed, stream::SYNTH);
    let templates = templates(spec, &mut rng);
    let total: usize = spec.sizes.iter().sum();
    let mut samples = Vec::with_capacity(total * spec.bands);
    let mut labels = Vec::with_capacity(total);
    for (j, &size) in spec.sizes.iter().enumerate() {
        for _ in 0..size {
            let s = if spec.scale_jitter > 0.0 {
                spec.scale_jitter * rng.random_range(0.0..std::f64::consts::TAU).sin()
            } else {
                0.0
            };
            for v in &templates[j] {
                let eps: f64 = rng.sample(StandardNormal);
                samples.push((1.0 + s) * v + spec.noise * eps);
            }
            labels.push(j);
        }
    }
    SpectralDataset::new(samples, labels, spec.bands, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_means(ds: &SpectralDataset) -> Vec<Vec<f64>> {
        (0..ds.classes())
            .map(|j| {
                let idx = ds.indices_of(j);
                (0..ds.bands())
                    .map(|b| idx.iter().map(|i| ds.sample(*i)[b]).sum::<f64>() / idx.len() as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn separated_at_zero_overlap() {
        let spec = SynthSpec::new(3, 64, vec![200, 200, 200, 200], 0.0);
        let ds = make_synthetic(&spec).unwrap();
        let means = class_means(&ds);
        for a in 0..4 {
            for b in a + 1..4 {
                let dist: f64 = means[a].iter().zip(&means[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(dist >= 5.0 * spec.noise, "classes {a},{b}: {dist}");
            }
        }
    }

    #[test]
    fn imbalance_ratio_by_construction() {
        let ds = make_synthetic(&SynthSpec::new(1, 16, vec![1000, 20], 0.3)).unwrap();
        assert_eq!(ds.class_counts(), vec![1000, 20]);
    }

    #[test]
    fn same_seed_same_dataset() {
        let spec = SynthSpec::new(42, 32, vec![30, 5], 0.5);
        assert_eq!(make_synthetic(&spec).unwrap(), make_synthetic(&spec).unwrap());
        let other = SynthSpec { seed: 43, ..spec.clone() };
        assert_ne!(make_synthetic(&spec).unwrap(), make_synthetic(&other).unwrap());
    }

    #[test]
    fn full_overlap_identical_templates() {
        let spec = SynthSpec::new(8, 20, vec![2, 2, 2], 1.0);
        let t = templates(&spec, &mut seeded(spec.seed, stream::SYNTH));
        for b in 0..20 {
            assert!((t[0][b] - t[1][b]).abs() < 1e-12 && (t[1][b] - t[2][b]).abs() < 1e-12);
        }
    }

    #[test]
    fn contract_violations() {
        assert!(make_synthetic(&SynthSpec::new(0, 8, vec![5, 1], 0.0)).is_err());
        assert!(make_synthetic(&SynthSpec::new(0, 8, vec![5, 5], 1.5)).is_err());
        let mut spec = SynthSpec::new(0, 8, vec![5, 5], 0.0);
        spec.classes = 3;
        assert!(make_synthetic(&spec).is_err());
    }
}
