//! The three players and their checkpoint format.

mod arch;
mod checkpoint;
mod classifier;
mod discriminator;
mod domain;
mod gan;
mod generator;

pub use arch::ArchConfig;
pub use checkpoint::{checkpoint_bytes, model_from_bytes, read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use classifier::Classifier;
pub use discriminator::Discriminator;
pub use domain::{compute_class_domains, ClassDomain};
pub use gan::{GanMode, GanModel};
pub use generator::{GeneratorBank, GeneratorKind, GeneratorNet, NoiseLaw};
