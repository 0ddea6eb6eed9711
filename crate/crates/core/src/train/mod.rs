//! Loss, optimizers, the training loop, evaluation and heatmap rendering.

mod config;
mod eval;
mod loss;
mod optim;
mod render;
mod trainer;

pub use config::{Precision, TrainConfig};
pub use eval::{evaluate, score, EvalReport, Evaluation, MAX_GAME_LEVEL};
pub use loss::masked_mse_loss;
pub use optim::{Optimizer, OptimizerConfig};
pub use render::{heatmap, intensities, montage, save_image};
pub use trainer::{check_compatible, clip_gradients, train, train_to_dir, TrainArtifacts, TrainRun};
