//! Reverse-mode differentiable computation over dense arrays, the AdaDelta
//! optimizer, and a finite-difference gradient oracle.

pub mod kernels;
mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{finite_difference_check, LossBuilder};
pub use optim::{adadelta_step, AdaDeltaConfig, AdaDeltaState};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::{Scalar, Tensor};

/// Errors raised by the differentiation kernel.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Glorot-uniform bound √(6 / (fan_in + fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        /// Softmax output is a distribution and is shift-invariant.
        #[test]
        fn softmax_distribution_properties(
            xs in proptest::collection::vec(-20.0f64..20.0, 1..12),
            shift in -10.0f64..10.0,
        ) {
            let p = kernels::softmax(&xs);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);

            let shifted: Vec<f64> = xs.iter().map(|&x| x + shift).collect();
            let q = kernels::softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        /// AdaDelta moves every coordinate against its gradient sign.
        #[test]
        fn adadelta_opposes_gradient(
            gs in proptest::collection::vec(-5.0f64..5.0, 1..8),
        ) {
            prop_assume!(gs.iter().all(|&g| g.abs() > 1e-6));
            let mut p = Tensor::zeros(vec![gs.len()]);
            let g = Tensor::vector(gs.clone());
            let mut state = AdaDeltaState::new(&[&p], AdaDeltaConfig::default());
            adadelta_step(&mut [&mut p], &[g], &mut state).unwrap();
            for (v, g) in p.data().iter().zip(&gs) {
                prop_assert!(v.signum() == -g.signum());
            }
        }
    }
}
