//! Layers, initialisation and optimisation.

mod adam;
mod init;
mod layers;

pub use adam::{Adam, AdamConfig};
pub use init::{xavier_init, xavier_std};
pub use layers::{BatchNorm, BnMode, Conv1d, ConvTranspose1d, Dense, LayerKind, LayerView};
