use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use super::provider::DepthProvider;
use super::viewbank::{bank_dir, load_view_bank};
use super::{img_err, io_err, sidecar, DataError, Result};
use crate::augment::{resize_bilinear, ViewBank};
use crate::geometry::DepthMap;
use crate::imageio::{load_png, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

/// One sample; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub image: PathBuf,
    pub depth: Option<PathBuf>,
    pub label: usize,
    pub view_bank: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub class_names: Vec<String>,
    pub entries: Vec<Entry>,
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(path).map_err(io_err(path))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    out.sort();
    Ok(out)
}

/// Scans `root/{split}/{class}/*.png`. Classes and files are ordered
/// lexicographically; a missing `.dpt` sidecar leaves `depth` empty.
pub fn load_dataset(root: &Path, split: Split) -> Result<DatasetManifest> {
    let split_dir = root.join(split.as_str());
    let classes: Vec<PathBuf> = sorted_dir(&split_dir)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    for (label, class_dir) in classes.iter().enumerate() {
        class_names.push(class_dir.file_name().expect("named dir").to_string_lossy().into_owned());
        for file in sorted_dir(class_dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
            let rel = file.strip_prefix(root).expect("under root").to_path_buf();
            let (w, h) = image::image_dimensions(&file).map_err(img_err(&file))?;
            let dpt = file.with_extension("dpt");
            let depth = if dpt.is_file() {
                let d = sidecar::read_depth(&dpt)?;
                if d.dim() != (h as usize, w as usize) {
                    return Err(DataError::Shape(format!("{} is {h}x{w} but its depth is {:?}", rel.display(), d.dim())));
                }
                Some(dpt.strip_prefix(root).expect("under root").to_path_buf())
            } else {
                None
            };
            let bank = bank_dir(root, &rel);
            let view_bank = bank.join("views.json").is_file().then(|| bank.strip_prefix(root).expect("under root").to_path_buf());
            entries.push(Entry { image: rel, depth, label, view_bank });
        }
    }
    if entries.is_empty() {
        return Err(DataError::Empty(format!("no images under {}", split_dir.display())));
    }
    Ok(DatasetManifest { root: root.to_path_buf(), split, class_names, entries })
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).expect("serializable");
        fs::write(path, json).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&bytes).map_err(|e| DataError::Format { path: path.to_path_buf(), detail: e.to_string() })
    }
}

fn resize_image(img: &Image, size: usize) -> Image {
    let (c, h, w) = img.dim();
    if (h, w) == (size, size) {
        return img.clone();
    }
    let mut out = Array3::zeros((c, size, size));
    for (k, mut dst) in out.axis_iter_mut(Axis(0)).enumerate() {
        dst.assign(&resize_bilinear(img.index_axis(Axis(0), k), size, size));
    }
    out
}

fn resize_depth(d: DepthMap, size: usize) -> DepthMap {
    if d.dim() == (size, size) {
        return d;
    }
    DepthMap::new(resize_bilinear(d.values().view(), size, size).mapv(|v| v.clamp(0.0, 1.0))).expect("interpolation stays in range")
}

/// A split decoded into memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub images: Vec<Image>,
    pub depths: Vec<Option<DepthMap>>,
    pub banks: Vec<Option<ViewBank>>,
}

impl LoadedDataset {
    /// Decodes every entry, resizing to `size x size` when given. Depth
    /// comes from `provider` when set; view banks are read when `banks`.
    pub fn load(manifest: DatasetManifest, size: Option<usize>, provider: Option<&DepthProvider>, banks: bool) -> Result<Self> {
        let mut images = Vec::with_capacity(manifest.entries.len());
        let mut depths = Vec::with_capacity(manifest.entries.len());
        let mut bank_list = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let path = manifest.root.join(&e.image);
            let img = load_png(&path).map_err(img_err(&path))?;
            let depth = match provider {
                Some(p) => Some(p.depth_for(&manifest.root, e, &img)?),
                None => None,
            };
            let bank = if banks {
                let dir = e.view_bank.as_ref().ok_or_else(|| DataError::Missing(format!("no view bank for {}", e.image.display())))?;
                let mut b = load_view_bank(&manifest.root.join(dir))?;
                if let Some(s) = size {
                    for v in &mut b.views {
                        v.rgb = resize_image(&v.rgb, s);
                        v.depth = v.depth.take().map(|d| resize_depth(d, s));
                    }
                }
                Some(b)
            } else {
                None
            };
            images.push(match size {
                Some(s) => resize_image(&img, s),
                None => img,
            });
            depths.push(match (depth, size) {
                (Some(d), Some(s)) => Some(resize_depth(d, s)),
                (d, _) => d,
            });
            bank_list.push(bank);
        }
        Ok(Self { manifest, images, depths, banks: bank_list })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.manifest.labels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_png;

    fn fixture(root: &Path) {
        for class in ["b_cls", "a_cls"] {
            let dir = root.join("train").join(class);
            fs::create_dir_all(&dir).unwrap();
            for name in ["2.png", "1.png"] {
                save_png(&Image::from_elem((3, 4, 5), 0.5), &dir.join(name)).unwrap();
                if !(class == "b_cls" && name == "2.png") {
                    sidecar::write_depth(&dir.join(name).with_extension("dpt"), &DepthMap::zeros(4, 5)).unwrap();
                }
            }
        }
    }

    #[test]
    fn loads_sorted_entries_and_optional_depth() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = load_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(m.class_names, vec!["a_cls", "b_cls"]);
        assert_eq!(m.labels(), vec![0, 0, 1, 1]);
        assert_eq!(m.entries[0].image, Path::new("train/a_cls/1.png"));
        assert!(m.entries[3].depth.is_none() && m.entries[2].depth.is_some());
        assert_eq!(m, load_dataset(dir.path(), Split::Train).unwrap());
        let cache = dir.path().join("m.json");
        m.save(&cache).unwrap();
        assert_eq!(DatasetManifest::load(&cache).unwrap(), m);
    }

    #[test]
    fn errors_on_empty_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("val/x")).unwrap();
        assert!(matches!(load_dataset(dir.path(), Split::Val), Err(DataError::Empty(_))));
        fixture(dir.path());
        sidecar::write_depth(&dir.path().join("train/a_cls/1.dpt"), &DepthMap::zeros(2, 2)).unwrap();
        assert!(matches!(load_dataset(dir.path(), Split::Train), Err(DataError::Shape(_))));
        fs::write(dir.path().join("train/a_cls/1.png"), b"nope").unwrap();
        assert!(matches!(load_dataset(dir.path(), Split::Train), Err(DataError::Image { .. })));
    }
}
