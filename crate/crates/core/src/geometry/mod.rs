//! Single-view synthesis with multiplane images.
//!
//! An RGB image and its disparity map are sliced into fronto-parallel
//! RGBα planes ([`build_mpi`]), each plane is warped into the target
//! camera by its plane-induced homography ([`plane_homography`],
//! [`warp_plane`]) and the warped stack is alpha-composited
//! ([`composite`]). [`render_novel_view`] chains the four steps.
//!
//! Pixel coordinates address pixel centers: pixel `(x, y)` sits at
//! `[x, y, 1]ᵀ` in homogeneous form.

mod camera;
mod depth;
mod mpi;
mod render;
mod warp;

pub use camera::{plane_homography, CameraIntrinsics, CameraPose};
pub use depth::DepthMap;
pub use mpi::{build_mpi, build_mpi_layers, composite, Composite, DepthRange, MultiplaneImage, Plane};
pub use render::{render_novel_view, render_novel_view_rgbd, Background, GeometryConfig, RenderedView, ViewRange, ViewSpec};
pub use warp::{warp_plane, PlaneLayer};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
