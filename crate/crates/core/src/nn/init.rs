use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{contract, Result};
use crate::rng::Rng;

/// Standard deviation of Xavier-normal initialisation: `gain * sqrt(2 / (fan_in + fan_out))`.
pub fn xavier_std(fan_in: usize, fan_out: usize, gain: f64) -> f64 {
    gain * (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Draw a tensor of `shape` from `N(0, xavier_std^2)`.
pub fn xavier_init(fan_in: usize, fan_out: usize, gain: f64, shape: &[usize], rng: &mut Rng) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(contract(format!("xavier_init needs positive fans, got ({fan_in}, {fan_out})")));
    }
    let std = xavier_std(fan_in, fan_out, gain);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data)
}
