//! Differentiable primitives with hand-written backward passes.
//!
//! Every forward function that needs to be differentiated returns a [`GradPair`]: the
//! output value together with whatever the matching `*_backward` function needs to map an
//! upstream gradient of the same shape back onto inputs and parameters.

mod activation;
mod conv;
pub mod gradcheck;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use conv::{
    conv_backward, conv_backward_params, conv_forward, conv_forward_saved, ConvGrads, ConvParams,
    ConvSaved,
};
pub use gradcheck::{grad_check, seeded_uniform, GradCheckReport, FD_EPSILON};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool3d, maxpool3d_backward, MaxPool3d, PoolSaved};

use crate::tensor::{Shape, Tensor};

/// Forward output plus the record its backward pass consumes.
#[derive(Debug, Clone)]
pub struct GradPair<T, S> {
    pub value: Tensor<T>,
    pub saved: S,
}

/// Uniform access to the learnable tensors of a layer, in declaration order.
///
/// Gradients are stored in the same type as the parameters they belong to, so an optimizer
/// can zip `slices_mut()` of the parameters with `slices()` of the gradients.
pub trait Parameters<T> {
    fn slices(&self) -> Vec<(Shape, &[T])>;
    fn slices_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|(_, s)| s.len()).sum()
    }
}
