//! Weighted kNN, linear probes, synthetic corruptions and robustness
//! reports.

mod corrupt;
mod knn;
mod probe;
mod report;
mod robustness;

pub use corrupt::{
    brightness, contrast, corrupt, defocus_blur, gaussian_noise, impulse_noise, jpeg, motion_blur, pixelate, shot_noise, Category,
    CorruptionKind, CorruptionSpec,
};
pub use knn::{knn_eval, knn_predict, KnnConfig};
pub use probe::{linear_probe, train_linear, LinearHead, ProbeConfig, ProbeResult};
pub use report::{render_table, report_csv, write_sweep_plot, SweepPoint};
pub use robustness::{robustness_eval, stack_depth, Classifier, DepthMode, EvalInputs, EvalReport, ReportCell};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation setup: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
