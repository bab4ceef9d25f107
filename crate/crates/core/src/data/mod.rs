//! Spectral datasets: ingestion, normalisation, stratified splits, class
//! priors and a seeded synthetic imbalanced spectrum generator.

mod dataset;
mod io;
mod split;
mod synth;

pub use dataset::{class_priors, Normalization, SpectralDataset};
pub use io::{load_dataset, read_bin, read_csv, save_dataset, write_bin, write_csv, DataFormat};
pub use split::{split_tttr, SplitSpec};
pub use synth::{make_synthetic, SynthSpec};
