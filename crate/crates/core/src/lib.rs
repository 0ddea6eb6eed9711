//! Temporal channel-aware (TCA) networks for video crowd counting.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense 5-axis arrays `(n, c, d, h, w)` and the `DMAP` container format.
//! * [`nn`] – differentiable primitives (convolution, pooling, activations) with analytic
//!   backward passes and a finite-difference checker.
//! * [`tca`] – the TCA block, the E3D/E2D network assembly and checkpoints.
//! * [`density`] – ground-truth density maps, ROI masks and target downscaling.
//! * [`metrics`] – MAE, root-mean-square MSE and GAME.
//! * [`data`] – dataset manifests, clip windowing and a synthetic moving-crowd generator.
//! * [`train`] – loss, optimizers, the training loop, evaluation and heatmap rendering.
//! * [`gradsuite`] – named finite-difference checks of every differentiable operation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for gradient checks);
//! the aliases below name the two concrete instantiations.

pub mod data;
pub mod density;
pub mod error;
pub mod gradsuite;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod tca;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type ConvParams32 = nn::ConvParams<f32>;
pub type ConvParams64 = nn::ConvParams<f64>;
pub type TcaBlock32 = tca::TcaBlockParams<f32>;
pub type TcaBlock64 = tca::TcaBlockParams<f64>;
pub type Network32 = tca::Network<f32>;
pub type Network64 = tca::Network<f64>;
