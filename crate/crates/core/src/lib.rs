//! Depth signals for contrastive self-supervised learning.
//!
//! Two routes inject monocular depth into an SSL pipeline:
//!
//! - a fourth input channel carrying per-pixel disparity, randomly zeroed
//!   during training ([`augment::depth_dropout`]);
//! - novel views rendered from a multiplane image built out of the RGB
//!   image and its depth ([`geometry::render_novel_view`]), cached offline
//!   in a view bank and sampled as augmentations.
//!
//! BYOL, SimSiam and SwAV ([`ssl`]) consume the resulting pairs; [`eval`]
//! measures the learned representation with weighted kNN, linear probes
//! and a set of synthetic corruptions.

pub mod augment;
pub mod config;
pub mod data;
pub mod eval;
pub mod geometry;
pub mod imageio;
pub mod pipeline;
pub mod rng;
pub mod ssl;

use thiserror::Error;

/// Top-level error, grouping the per-module failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Ssl(#[from] ssl::SslError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Process exit code for this failure: 2 config, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use augment::AugmentError as A;
        use data::DataError as D;
        use eval::EvalError as E;
        use ssl::SslError as S;
        match self {
            Error::Config(_) | Error::Augment(A::Invalid(_) | A::MissingResource(_)) => 2,
            Error::Data(D::Missing(_) | D::Empty(_)) | Error::Eval(E::Config(_)) | Error::Ssl(S::Config(_)) => 2,
            Error::Ssl(S::NonFiniteLoss { .. } | S::NumericGuard(_)) => 3,
            Error::Io { .. } | Error::Ssl(S::Io { .. } | S::Format(_)) => 4,
            Error::Data(D::Io { .. } | D::Image { .. } | D::Format { .. }) => 4,
            Error::Eval(E::Io { .. } | E::Image(_) | E::Data(D::Io { .. } | D::Image { .. } | D::Format { .. })) => 4,
            Error::Eval(E::Data(D::Missing(_))) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
