//! Image-folder datasets with depth sidecars, a synthetic RGB-D generator
//! with exact depth, and offline view banks.

mod manifest;
mod provider;
mod sidecar;
mod synthetic;
mod viewbank;

pub use manifest::{load_dataset, DatasetManifest, Entry, LoadedDataset, Split};
pub use provider::DepthProvider;
pub use sidecar::{read_depth, write_depth};
pub use synthetic::{generate_synthetic_dataset, render_scene, sample_scene, ShapeKind, SceneLayer, SyntheticConfig, SyntheticSceneSpec};
pub use viewbank::{bank_dir, build_view_bank, load_view_bank, sample_view_specs, BankReport, VIEWBANK_DIR};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("empty dataset: {0}")]
    Empty(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing resource: {0}")]
    Missing(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("depth provider failed: {0}")]
    Provider(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

pub(crate) fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> DataError + '_ {
    move |source| DataError::Image { path: path.to_path_buf(), source }
}
