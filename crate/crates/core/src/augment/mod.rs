//! Training-view construction.
//!
//! Each view goes through a random resized crop and horizontal flip
//! ([`sample_geometric`], [`apply_paired`]) that is applied identically to
//! RGB and depth, then photometric jitter on RGB only, then per-view depth
//! dropout. With 3D views enabled, the crop starts from a view drawn
//! uniformly from the sample's pre-rendered bank.

mod dropout;
mod geometric;
mod pair;
mod photometric;

pub use dropout::{depth_dropout, DepthDropout};
pub use geometric::{apply_paired, resize_bilinear, sample_geometric, CropRect, GeometricParams};
pub use pair::{
    base_view, make_crops, make_pair, AugmentationPolicy, AugmentedPair, AugmentedView, BankView, MultiCrop, Provenance,
    Sample, ViewBank,
};
pub use photometric::{apply_photometric, gaussian_blur, BaseRecipe};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("missing resource: {0}")]
    MissingResource(String),
}

pub type Result<T> = std::result::Result<T, AugmentError>;
