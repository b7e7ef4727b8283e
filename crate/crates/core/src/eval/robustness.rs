use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD, ArrayView2};
use serde::{Deserialize, Serialize};

use super::corrupt::{corrupt, Category, CorruptionKind, CorruptionSpec};
use super::knn::{accuracy, knn_predict, KnnConfig};
use super::probe::LinearHead;
use super::{EvalError, Result};
use crate::data::DepthProvider;
use crate::geometry::DepthMap;
use crate::imageio::Image;
use crate::rng::{stream, tags};
use crate::ssl::nn::{to_nhwc, Sequential};
use crate::ssl::encode;

/// Which depth a 4-channel encoder sees at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// The clean image's cached depth, even for corrupted inputs.
    Sidecar,
    /// An all-zero depth channel.
    Zero,
    /// The depth provider re-run on each (possibly corrupted) image.
    Provider,
}

/// How features are turned into predictions.
#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    Knn { features: ArrayView2<'a, f64>, labels: &'a [usize], config: KnnConfig },
    Linear(&'a LinearHead),
}

impl Classifier<'_> {
    pub fn predict(&self, features: ArrayView2<f64>, num_classes: usize) -> Result<Vec<usize>> {
        match self {
            Classifier::Knn { features: bank, labels, config } => knn_predict(*bank, labels, features, num_classes, config),
            Classifier::Linear(head) => {
                if head.weight.ncols() != features.ncols() {
                    return Err(EvalError::Shape(format!("head expects {} features, got {}", head.weight.ncols(), features.ncols())));
                }
                Ok(head.predict(features))
            }
        }
    }
}

/// A labelled evaluation split plus the encoder that embeds it.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub encoder: &'a Sequential,
    /// 3 for RGB encoders, 4 for RGB-D.
    pub in_channels: usize,
    pub images: &'a [Image],
    pub depths: &'a [Option<DepthMap>],
    pub labels: &'a [usize],
    pub num_classes: usize,
    pub provider: Option<&'a DepthProvider>,
}

impl EvalInputs<'_> {
    fn depth_for(&self, i: usize, img: &Image, mode: DepthMode) -> Result<DepthMap> {
        let (_, h, w) = img.dim();
        match mode {
            DepthMode::Zero => Ok(DepthMap::zeros(h, w)),
            DepthMode::Sidecar => self.depths.get(i).cloned().flatten().ok_or_else(|| EvalError::Config(format!("sample {i} has no cached depth"))),
            DepthMode::Provider => {
                let p = self.provider.ok_or_else(|| EvalError::Config("depth mode `provider` needs a depth provider".into()))?;
                Ok(p.estimate(img)?)
            }
        }
    }

    /// Encoder input for `images`, adding the depth channel when needed.
    fn batch(&self, images: &[Image], mode: DepthMode) -> Result<ArrayD<f64>> {
        let stacked = match self.in_channels {
            3 => images.to_vec(),
            4 => images
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let d = self.depth_for(i, img, mode)?;
                    if d.dim() != (img.dim().1, img.dim().2) {
                        return Err(EvalError::Shape(format!("depth {:?} does not match image {:?}", d.dim(), img.dim())));
                    }
                    Ok(stack_depth(img, &d))
                })
                .collect::<Result<Vec<_>>>()?,
            c => return Err(EvalError::Config(format!("unsupported encoder input width {c}"))),
        };
        let refs: Vec<&Image> = stacked.iter().collect();
        Ok(to_nhwc(&refs))
    }

    /// Features for `images` (row-aligned with `self.labels`).
    pub fn features(&self, images: &[Image], mode: DepthMode) -> Result<Array2<f64>> {
        Ok(encode(self.encoder, &self.batch(images, mode)?))
    }
}

/// Appends a depth plane to an RGB image.
pub fn stack_depth(img: &Image, depth: &DepthMap) -> Image {
    let view = depth.values().view().insert_axis(ndarray::Axis(0));
    ndarray::concatenate(ndarray::Axis(0), &[img.view(), view]).expect("matching spatial size")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub accuracy: f64,
}

/// Clean and corrupted accuracy. `corrupted_mean` averages all cells
/// uniformly; category means average their member cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clean_top1: f64,
    pub cells: Vec<ReportCell>,
    pub category_means: BTreeMap<Category, f64>,
    pub corrupted_mean: Option<f64>,
    pub depth_mode: DepthMode,
    pub config: serde_json::Value,
    pub seed: u64,
}

impl EvalReport {
    pub fn cell(&self, spec: &CorruptionSpec) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.kind == spec.kind && c.severity == spec.severity)
    }

    /// Recomputes the aggregate fields from `cells`.
    pub fn aggregate(&mut self) {
        let mut groups: BTreeMap<Category, Vec<f64>> = BTreeMap::new();
        for c in &self.cells {
            groups.entry(c.kind.category()).or_default().push(c.accuracy);
        }
        self.category_means = groups.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect();
        self.corrupted_mean = (!self.cells.is_empty()).then(|| self.cells.iter().map(|c| c.accuracy).sum::<f64>() / self.cells.len() as f64);
    }
}

/// Evaluates the clean split and every `(kind, severity)` cell in `specs`.
/// Corruption noise for sample `i` comes from its own stream, so a cell's
/// result does not depend on which other cells are evaluated.
pub fn robustness_eval(
    inputs: &EvalInputs,
    classifier: &Classifier,
    specs: &[CorruptionSpec],
    depth_mode: DepthMode,
    seed: u64,
    config: serde_json::Value,
) -> Result<EvalReport> {
    if inputs.images.is_empty() || inputs.images.len() != inputs.labels.len() {
        return Err(EvalError::Shape("evaluation images and labels must be non-empty and aligned".into()));
    }
    let score = |images: &[Image]| -> Result<f64> {
        let f = inputs.features(images, depth_mode)?;
        Ok(accuracy(&classifier.predict(f.view(), inputs.num_classes)?, inputs.labels))
    };
    let clean_top1 = score(inputs.images)?;
    let mut cells = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        let kind_id = CorruptionKind::ALL.iter().position(|k| *k == spec.kind).expect("listed kind") as u64;
        let corrupted = inputs
            .images
            .iter()
            .enumerate()
            .map(|(i, img)| corrupt(img, spec, &mut stream(seed, &[tags::CORRUPT, kind_id, spec.severity as u64, i as u64])))
            .collect::<Result<Vec<_>>>()?;
        let acc = score(&corrupted)?;
        log::info!("{spec}: {acc:.2}%");
        cells.push(ReportCell { kind: spec.kind, severity: spec.severity, accuracy: acc });
    }
    let mut report = EvalReport { clean_top1, cells, category_means: BTreeMap::new(), corrupted_mean: None, depth_mode, config, seed };
    report.aggregate();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssl::{EncoderSpec, Backbone};
    use ndarray::Array3;

    fn toy(n: usize) -> (Vec<Image>, Vec<Option<DepthMap>>, Vec<usize>) {
        let images = (0..n)
            .map(|i| Array3::from_shape_fn((3, 8, 8), |(c, y, x)| if i % 2 == 0 { 0.2 + 0.02 * (c + y) as f64 } else { 0.8 - 0.02 * (c + x) as f64 }))
            .collect();
        let depths = (0..n).map(|i| Some(DepthMap::new(Array2::from_elem((8, 8), 0.1 * (i % 3) as f64)).unwrap())).collect();
        (images, depths, (0..n).map(|i| i % 2).collect())
    }

    fn encoder(c: usize) -> Sequential {
        EncoderSpec { backbone: Backbone::TinyConv, in_channels: c, feature_dim: 8 }.build(&mut stream(1, &[])).unwrap()
    }

    #[test]
    fn single_cell_matches_full_grid() {
        let (images, depths, labels) = toy(12);
        let enc = encoder(3);
        let inputs = EvalInputs { encoder: &enc, in_channels: 3, images: &images, depths: &depths, labels: &labels, num_classes: 2, provider: None };
        let bank = inputs.features(&images, DepthMode::Zero).unwrap();
        let clf = Classifier::Knn { features: bank.view(), labels: &labels, config: KnnConfig { k: 3, temperature: 0.1 } };
        let grid = CorruptionSpec::full_grid();
        let full = robustness_eval(&inputs, &clf, &grid, DepthMode::Zero, 5, serde_json::Value::Null).unwrap();
        assert_eq!(full.cells.len(), 45);
        let spec = CorruptionSpec::new(CorruptionKind::ShotNoise, 4).unwrap();
        let one = robustness_eval(&inputs, &clf, &[spec], DepthMode::Zero, 5, serde_json::Value::Null).unwrap();
        assert_eq!(one.cells[0], *full.cell(&spec).unwrap());
        for (cat, mean) in &full.category_means {
            let members: Vec<f64> = full.cells.iter().filter(|c| c.kind.category() == *cat).map(|c| c.accuracy).collect();
            assert!((mean - members.iter().sum::<f64>() / members.len() as f64).abs() <= 1e-12);
        }
        assert!(full.cells.iter().all(|c| (0.0..=100.0).contains(&c.accuracy)));
    }

    #[test]
    fn depth_modes_check_availability() {
        let (images, mut depths, labels) = toy(4);
        depths[1] = None;
        let enc = encoder(4);
        let inputs = EvalInputs { encoder: &enc, in_channels: 4, images: &images, depths: &depths, labels: &labels, num_classes: 2, provider: None };
        assert!(matches!(inputs.features(&images, DepthMode::Sidecar), Err(EvalError::Config(_))));
        assert!(matches!(inputs.features(&images, DepthMode::Provider), Err(EvalError::Config(_))));
        assert_eq!(inputs.features(&images, DepthMode::Zero).unwrap().dim(), (4, 8));
    }
}
