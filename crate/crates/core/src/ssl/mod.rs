//! BYOL, SimSiam and SwAV on a small hand-rolled network stack.

pub mod checkpoint;
mod encoder;
mod heads;
mod losses;
mod method;
pub mod nn;
mod optim;
mod sinkhorn;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use encoder::{adapt_encoder, adapt_input_layer, drop_depth_filters, strip_depth_input, AdaptMode, Backbone, EncoderSpec};
pub use heads::{mlp2, simsiam_predictor, simsiam_projector, swav_projector};
pub use losses::{byol_loss, cosine_rows, simsiam_loss, swav_loss, swav_loss_with_codes, ByolLoss, SimSiamLoss, SwavLoss};
pub use method::{ByolConfig, MethodConfig, SimSiamConfig, SwavConfig};
pub use optim::{cosine_lr, ema_update, grad_norm, Optimizer, OptimizerConfig, TauSchedule};
pub use sinkhorn::{sinkhorn, SinkhornConfig};
pub use trainer::{encode, Batch, StepMetrics, TrainState};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SslError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric guard: {0}")]
    NumericGuard(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("checkpoint i/o at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, SslError>;
