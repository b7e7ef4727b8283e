use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::manifest::Entry;
use super::{img_err, io_err, sidecar, DataError, Result};
use crate::geometry::DepthMap;
use crate::imageio::{save_png, Image};

/// Where depth maps come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DepthProvider {
    /// Precomputed `.dpt` sidecars next to each image.
    Sidecar,
    /// Exact sidecars written by the synthetic generator.
    Synthetic,
    /// An external estimator, run as `program [args..] <input.png> <output.dpt>`.
    /// Its output may use any finite scale; it is min-max normalized.
    Command { program: String, args: Vec<String> },
}

impl DepthProvider {
    /// Depth for a dataset entry whose decoded pixels are `img`.
    pub fn depth_for(&self, root: &Path, entry: &Entry, img: &Image) -> Result<DepthMap> {
        match self {
            DepthProvider::Sidecar | DepthProvider::Synthetic => {
                let rel = entry.depth.as_ref().ok_or_else(|| DataError::Missing(format!("no depth sidecar for {}", entry.image.display())))?;
                sidecar::read_depth(&root.join(rel))
            }
            DepthProvider::Command { .. } => self.estimate(img),
        }
    }

    /// Runs the estimator on raw pixels; only external commands can.
    pub fn estimate(&self, img: &Image) -> Result<DepthMap> {
        let DepthProvider::Command { program, args } = self else {
            return Err(DataError::Provider("sidecar depth cannot be estimated from pixels".into()));
        };
        let dir = tempfile::tempdir().map_err(io_err(Path::new("<tempdir>")))?;
        let input = dir.path().join("input.png");
        let output = dir.path().join("output.dpt");
        save_png(img, &input).map_err(img_err(&input))?;
        let status = Command::new(program).args(args).arg(&input).arg(&output).status().map_err(io_err(Path::new(program)))?;
        if !status.success() {
            return Err(DataError::Provider(format!("{program} exited with {status}")));
        }
        let bytes = std::fs::read(&output).map_err(io_err(&output))?;
        let raw = sidecar::decode_raw(&bytes, &output)?;
        let (_, h, w) = img.dim();
        if raw.dim() != (h, w) {
            return Err(DataError::Shape(format!("estimator returned {:?} for a {h}x{w} image", raw.dim())));
        }
        DepthMap::normalized(&raw).map_err(|e| DataError::Provider(e.to_string()))
    }
}
