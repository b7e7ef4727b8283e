//! Offline novel-view banks: `root/.viewbank/{relpath}/view_{i}.png`, the
//! matching `view_{i}.dpt` disparity and a `views.json` index.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::DatasetManifest;
use super::{img_err, io_err, sidecar, DataError, Result};
use crate::augment::{BankView, ViewBank};
use crate::geometry::{render_novel_view_rgbd, GeometryConfig, ViewRange, ViewSpec};
use crate::imageio::{load_png, save_png};
use crate::rng::{stream, tags};

pub const VIEWBANK_DIR: &str = ".viewbank";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    idx: usize,
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BankIndex {
    k: usize,
    /// Settings the bank was rendered with; a bank is reused only when they match.
    #[serde(default)]
    range: Option<ViewRange>,
    #[serde(default)]
    geometry: Option<GeometryConfig>,
    #[serde(default)]
    seed: Option<u64>,
    views: Vec<IndexEntry>,
}

/// Bank directory of the image at `rel` (relative to `root`).
pub fn bank_dir(root: &Path, rel: &Path) -> PathBuf {
    root.join(VIEWBANK_DIR).join(rel.with_extension(""))
}

fn path_tag(rel: &Path) -> u64 {
    let digest = Sha256::digest(rel.to_string_lossy().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `k` shifts drawn uniformly from the box `[-range, range]`.
pub fn sample_view_specs(k: usize, range: &ViewRange, seed: u64, rel: &Path) -> Vec<ViewSpec> {
    let mut rng = stream(seed, &[tags::VIEWBANK, path_tag(rel)]);
    let mut draw = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    (0..k).map(|_| ViewSpec::new(draw(range.x), draw(range.y), draw(range.z))).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankReport {
    pub built: usize,
    pub skipped: usize,
    /// Samples that could not be rendered, with the reason.
    pub errors: Vec<(PathBuf, String)>,
}

/// A bank with at least `k` views rendered with the same settings; its
/// first `k` views equal a fresh `k`-view bank.
fn is_complete(dir: &Path, k: usize, range: &ViewRange, cfg: &GeometryConfig, seed: u64) -> bool {
    let Ok(bytes) = fs::read(dir.join("views.json")) else { return false };
    let Ok(index) = serde_json::from_slice::<BankIndex>(&bytes) else { return false };
    index.k >= k
        && index.range.as_ref() == Some(range)
        && index.geometry.as_ref() == Some(cfg)
        && index.seed == Some(seed)
        && (0..index.k).all(|i| dir.join(format!("view_{i}.png")).is_file() && dir.join(format!("view_{i}.dpt")).is_file())
}

/// Renders `k` views per entry, skipping entries that already have a bank
/// of at least `k` views with the same range, geometry and seed.
/// Each entry is written to a temporary directory and renamed into place.
/// At most `limit` new entries are built when given.
pub fn build_view_bank(
    manifest: &DatasetManifest,
    k: usize,
    range: &ViewRange,
    cfg: &GeometryConfig,
    seed: u64,
    limit: Option<usize>,
) -> Result<(DatasetManifest, BankReport)> {
    if k == 0 {
        return Err(DataError::Missing("a view bank needs k ≥ 1".into()));
    }
    range.validate()?;
    cfg.validate()?;
    for (v, m) in [(range.x, cfg.max_shift.x), (range.y, cfg.max_shift.y), (range.z, cfg.max_shift.z)] {
        if v > m {
            return Err(crate::geometry::GeometryError::Validation(format!("view range {range:?} exceeds max_shift {:?}", cfg.max_shift)).into());
        }
    }
    let root = &manifest.root;
    let mut report = BankReport::default();
    let mut out = manifest.clone();
    for entry in &mut out.entries {
        let dir = bank_dir(root, &entry.image);
        let rel_dir = dir.strip_prefix(root).expect("under root").to_path_buf();
        if is_complete(&dir, k, range, cfg, seed) {
            entry.view_bank = Some(rel_dir);
            report.skipped += 1;
            continue;
        }
        if limit.is_some_and(|l| report.built >= l) {
            continue;
        }
        let Some(depth_rel) = &entry.depth else {
            report.errors.push((entry.image.clone(), "no depth sidecar".into()));
            continue;
        };
        let img_path = root.join(&entry.image);
        let rgb = load_png(&img_path).map_err(img_err(&img_path))?;
        let depth = sidecar::read_depth(&root.join(depth_rel))?;
        let specs = sample_view_specs(k, range, seed, &entry.image);
        let parent = dir.parent().expect("nested");
        fs::create_dir_all(parent).map_err(io_err(parent))?;
        let tmp = parent.join(format!(".tmp-{}", dir.file_name().expect("named").to_string_lossy()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let mut index = BankIndex { k, range: Some(*range), geometry: Some(cfg.clone()), seed: Some(seed), views: Vec::with_capacity(k) };
        for (i, spec) in specs.iter().enumerate() {
            let view = render_novel_view_rgbd(&rgb, &depth, spec, cfg)?;
            let png = tmp.join(format!("view_{i}.png"));
            save_png(&view.color, &png).map_err(img_err(&png))?;
            sidecar::write_depth(&tmp.join(format!("view_{i}.dpt")), view.depth.as_ref().expect("rgbd render"))?;
            index.views.push(IndexEntry { idx: i, x: spec.x, y: spec.y, z: spec.z });
        }
        let json = tmp.join("views.json");
        fs::write(&json, serde_json::to_vec_pretty(&index).expect("serializable")).map_err(io_err(&json))?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(io_err(&dir))?;
        entry.view_bank = Some(rel_dir);
        report.built += 1;
    }
    Ok((out, report))
}

/// Reads every view of a bank directory.
pub fn load_view_bank(dir: &Path) -> Result<ViewBank> {
    let json = dir.join("views.json");
    let bytes = fs::read(&json).map_err(io_err(&json))?;
    let index: BankIndex = serde_json::from_slice(&bytes).map_err(|e| DataError::Format { path: json.clone(), detail: e.to_string() })?;
    let mut views = Vec::with_capacity(index.k);
    for e in &index.views {
        let png = dir.join(format!("view_{}.png", e.idx));
        let rgb = load_png(&png).map_err(img_err(&png))?;
        let dpt = dir.join(format!("view_{}.dpt", e.idx));
        let depth = if dpt.is_file() { Some(sidecar::read_depth(&dpt)?) } else { None };
        views.push(BankView { spec: ViewSpec::new(e.x, e.y, e.z), rgb, depth });
    }
    if views.is_empty() {
        return Err(DataError::Empty(format!("view bank {} has no views", dir.display())));
    }
    Ok(ViewBank { views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_dataset, load_dataset, Split, SyntheticConfig};
    use crate::imageio::load_png;

    fn dataset() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_dataset(dir.path(), 6, 1, 3, &SyntheticConfig { size: 16, ..Default::default() }).unwrap();
        dir
    }

    fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.join(VIEWBANK_DIR)];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn smaller_k_is_a_prefix() {
        let r = ViewRange::new(0.5, 0.5, 0.1);
        let rel = Path::new("train/a/00001.png");
        let long = sample_view_specs(8, &r, 4, rel);
        assert_eq!(sample_view_specs(3, &r, 4, rel), long[..3]);
        assert_ne!(sample_view_specs(3, &r, 4, Path::new("train/a/00002.png")), long[..3]);
    }

    #[test]
    fn zero_range_bank_reproduces_source() {
        let dir = dataset();
        let m = load_dataset(dir.path(), Split::Train).unwrap();
        let (m2, r) = build_view_bank(&m, 1, &ViewRange::new(0.0, 0.0, 0.0), &GeometryConfig::default(), 0, None).unwrap();
        assert_eq!(r.built, 6);
        for e in &m2.entries {
            let bank = load_view_bank(&dir.path().join(e.view_bank.as_ref().unwrap())).unwrap();
            let src = load_png(&dir.path().join(&e.image)).unwrap();
            let diff = (&bank.views[0].rgb - &src).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b));
            assert!(diff <= 1e-6);
        }
        assert_eq!(load_dataset(dir.path(), Split::Train).unwrap(), m2);
    }

    #[test]
    fn interrupted_build_resumes_to_identical_bank() {
        let (a, b) = (dataset(), dataset());
        let range = ViewRange::new(0.4, 0.4, 0.0);
        let cfg = GeometryConfig { num_planes: 8, ..Default::default() };
        let ma = load_dataset(a.path(), Split::Train).unwrap();
        build_view_bank(&ma, 3, &range, &cfg, 1, None).unwrap();
        let mb = load_dataset(b.path(), Split::Train).unwrap();
        let (_, r1) = build_view_bank(&mb, 3, &range, &cfg, 1, Some(2)).unwrap();
        assert_eq!(r1.built, 2);
        let (_, r2) = build_view_bank(&mb, 3, &range, &cfg, 1, None).unwrap();
        assert_eq!((r2.built, r2.skipped), (4, 2));
        assert_eq!(files(a.path()), files(b.path()));
    }

    #[test]
    fn banks_are_reused_only_with_matching_settings() {
        let dir = dataset();
        let m = load_dataset(dir.path(), Split::Train).unwrap();
        let cfg = GeometryConfig { num_planes: 8, ..Default::default() };
        let narrow = ViewRange::new(0.1, 0.1, 0.0);
        build_view_bank(&m, 4, &narrow, &cfg, 0, None).unwrap();
        let (_, r) = build_view_bank(&m, 2, &narrow, &cfg, 0, None).unwrap();
        assert_eq!((r.built, r.skipped), (0, 6));
        let (_, r) = build_view_bank(&m, 2, &ViewRange::new(0.4, 0.4, 0.0), &cfg, 0, None).unwrap();
        assert_eq!(r.built, 6);
        let (_, r) = build_view_bank(&m, 2, &ViewRange::new(0.4, 0.4, 0.0), &cfg, 1, None).unwrap();
        assert_eq!(r.built, 6);
        let (_, r) = build_view_bank(&m, 2, &ViewRange::new(0.4, 0.4, 0.0), &GeometryConfig { num_planes: 9, ..cfg }, 1, None).unwrap();
        assert_eq!(r.built, 6);
    }

    #[test]
    fn missing_depth_is_reported_per_sample() {
        let dir = dataset();
        let mut m = load_dataset(dir.path(), Split::Train).unwrap();
        m.entries[1].depth = None;
        let (_, r) = build_view_bank(&m, 1, &ViewRange::new(0.1, 0.0, 0.0), &GeometryConfig::default(), 0, None).unwrap();
        assert_eq!((r.built, r.errors.len()), (5, 1));
    }
}
