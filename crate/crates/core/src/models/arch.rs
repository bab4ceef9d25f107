use serde::{Deserialize, Serialize};

/// Network hyperparameters shared by a model and its checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Channels after the generator's dense layer and its two upsampling layers.
    pub gen_channels: [usize; 3],
    pub disc_channels: [usize; 2],
    pub disc_kernel: usize,
    pub cls_channels: [usize; 2],
    /// One classifier branch per kernel size.
    pub cls_kernels: Vec<usize>,
    /// Stride of every discriminator and classifier convolution.
    pub stride: usize,
    pub leaky_slope: f64,
    /// Batch normalisation in the generator's hidden layers.
    pub gen_batchnorm: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            gen_channels: [32, 16, 8],
            disc_channels: [8, 16],
            disc_kernel: 5,
            cls_channels: [8, 16],
            cls_kernels: vec![3, 5, 7],
            stride: 2,
            leaky_slope: 0.2,
            gen_batchnorm: false,
        }
    }
}

impl ArchConfig {
    /// Small networks for unit tests and toy problems.
    pub fn tiny() -> Self {
        Self {
            gen_channels: [4, 3, 2],
            disc_channels: [2, 3],
            disc_kernel: 3,
            cls_channels: [2, 3],
            cls_kernels: vec![3, 5],
            ..Self::default()
        }
    }
}
