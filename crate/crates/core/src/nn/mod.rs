//! Compact EfficientNet-style classifier: tensors, layer kernels, the network
//! and its optimizers, all with hand-written backward passes.

pub mod gradcheck;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use network::{BlockSpec, Network, NetworkConfig, ParamGrads};
pub use ops::Mode;
pub use optim::{Optimizer, OptimizerState};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mode misuse: {0}")]
    ModeMisuse(String),
    #[error("input has {frames} frames, network needs at least {min}")]
    TooFewFrames { frames: usize, min: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// He-normal initialization, `N(0, sqrt(2 / fan_in))` with fan_in the product of all but the first dim.
pub fn he_init<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let fan_in: usize = shape.iter().skip(1).product::<usize>().max(1);
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let mut rng = crate::seed::rng(seed);
    let mut t = Tensor::zeros(shape);
    for x in &mut t.data {
        *x = T::of_f64(dist.sample(&mut rng));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_init_deterministic() {
        let a: Tensor<f32> = he_init(&[8, 4, 3, 3], 11);
        assert_eq!(a, he_init(&[8, 4, 3, 3], 11));
        assert_ne!(a, he_init(&[8, 4, 3, 3], 12));
    }

    #[test]
    fn he_init_moments() {
        let t: Tensor<f64> = he_init(&[1000, 100], 3);
        let n = t.len() as f64;
        let mean = t.data.iter().sum::<f64>() / n;
        let sd = (t.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let target = 0.02f64.sqrt();
        assert!((sd - target).abs() / target < 0.05);
        assert!(mean.abs() < 3.0 * target / n.sqrt());
    }
}
