//! Run configuration: one JSON document with defaults for every key,
//! dotted-key overrides and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{AugmentationPolicy, BaseRecipe, DepthDropout};
use crate::data::{DepthProvider, SyntheticConfig};
use crate::eval::{CorruptionSpec, DepthMode, KnnConfig, ProbeConfig};
use crate::geometry::{GeometryConfig, ViewRange};
use crate::ssl::{Backbone, EncoderSpec, MethodConfig, OptimizerConfig};

/// Overrides `dataset.root` when set.
pub const DATA_ROOT_ENV: &str = "DEPTHSSL_DATA_ROOT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("bad override {0:?}: expected key.path=value")]
    Override(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn field(name: &str, message: impl ToString) -> ConfigError {
    ConfigError::Field { field: name.into(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// `root/{train,val}/{class}/*.png` with optional `.dpt` sidecars.
    #[default]
    Folder,
    /// Generated into `root` on first use.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub root: PathBuf,
    pub kind: DatasetKind,
    pub image_size: usize,
    pub synthetic: SyntheticSection,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { root: PathBuf::from("data/synthetic"), kind: DatasetKind::Synthetic, image_size: 32, synthetic: SyntheticSection::default() }
    }
}

impl DatasetSection {
    /// Last path component of the root, used in run names.
    pub fn name(&self) -> String {
        self.root.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub scene: SyntheticConfig,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self { n_train: 800, n_val: 200, seed: 0, scene: SyntheticConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSection {
    /// Feed depth as a fourth input channel.
    pub enabled: bool,
    pub provider: DepthProvider,
    pub dropout: f64,
    /// Depth fed to 4-channel encoders during evaluation.
    pub eval_mode: DepthMode,
}

impl Default for DepthSection {
    fn default() -> Self {
        Self { enabled: false, provider: DepthProvider::Sidecar, dropout: 0.5, eval_mode: DepthMode::Sidecar }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewsSection {
    /// Draw views from precomputed MPI view banks.
    pub enabled: bool,
    pub k: usize,
    pub range: ViewRange,
    /// Probability that a view comes from the bank rather than the source.
    pub q: f64,
    pub geometry: GeometryConfig,
    /// Seed of the bank's view draws, independent of the training seed.
    pub bank_seed: u64,
}

impl Default for ViewsSection {
    fn default() -> Self {
        Self { enabled: false, k: 4, range: ViewRange::new(0.5, 0.5, 0.0), q: 1.0, geometry: GeometryConfig::default(), bank_seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Backbone,
    pub feature_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = EncoderSpec::default();
        Self { backbone: e.backbone, feature_dim: e.feature_dim }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSection {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimSection {
    fn default() -> Self {
        Self { optimizer: OptimizerConfig::default(), epochs: 30, batch_size: 64, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub knn: KnnConfig,
    /// Run kNN validation every this many epochs; 0 means only at the end.
    pub knn_every: usize,
    pub probe: ProbeConfig,
    pub corruptions: Vec<CorruptionSpec>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { knn: KnnConfig::default(), knn_every: 0, probe: ProbeConfig::default(), corruptions: CorruptionSpec::full_grid() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub depth: DepthSection,
    pub views: ViewsSection,
    pub augment: BaseRecipe,
    pub method: MethodConfig,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub eval: EvalSection,
}

/// Sets `path` (dot separated) inside `doc`, creating objects as needed.
/// The value is parsed as JSON, falling back to a plain string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::Override(assignment.into()))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = doc;
    for part in key.split('.') {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        node = node.as_object_mut().expect("object").entry(part).or_insert(Value::Null);
    }
    *node = value;
    Ok(())
}

impl RunConfig {
    /// Parses a config document, reporting the offending field path.
    pub fn from_value(doc: Value) -> Result<Self> {
        serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            field(if path == "." { "<root>" } else { &path }, e.into_inner())
        })
    }

    /// Reads `path` (or starts from defaults), applies `overrides` and the
    /// data-root environment variable, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.into(), source })?;
                serde_json::from_str(&text).map_err(|e| field("<root>", e))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg = Self::from_value(doc)?;
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            if !root.is_empty() {
                cfg.dataset.root = PathBuf::from(root);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.image_size < 8 {
            return Err(field("dataset.image_size", "must be at least 8"));
        }
        if d.kind == DatasetKind::Folder && !d.root.is_dir() {
            return Err(field("dataset.root", format!("{} is not a directory", d.root.display())));
        }
        if d.kind == DatasetKind::Synthetic && (d.synthetic.n_train == 0 || d.synthetic.n_val == 0) {
            return Err(field("dataset.synthetic", "n_train and n_val must be positive"));
        }
        DepthDropout::new(self.depth.dropout).map_err(|e| field("depth.dropout", e))?;
        if self.depth.eval_mode == DepthMode::Provider && !matches!(self.depth.provider, DepthProvider::Command { .. }) {
            return Err(field("depth.eval_mode", "`provider` needs a command depth provider"));
        }
        let v = &self.views;
        if !(0.0..=1.0).contains(&v.q) {
            return Err(field("views.q", "must lie in [0, 1]"));
        }
        if v.enabled && v.k == 0 {
            return Err(field("views.k", "must be positive when views are enabled"));
        }
        v.geometry.validate().map_err(|e| field("views.geometry", e))?;
        v.range.validate().map_err(|e| field("views.range", e))?;
        let m = v.geometry.max_shift;
        if v.range.x > m.x || v.range.y > m.y || v.range.z > m.z {
            return Err(field("views.range", format!("exceeds views.geometry.max_shift {m:?}")));
        }
        self.augment.validate().map_err(|e| field("augment", e))?;
        if self.augment.out_size != d.image_size {
            return Err(field("augment.out_size", format!("must equal dataset.image_size ({})", d.image_size)));
        }
        self.policy().validate().map_err(|e| field("views", e))?;
        self.method.validate().map_err(|e| field("method", e))?;
        if let MethodConfig::Swav(s) = &self.method {
            s.multi_crop.validate().map_err(|e| field("method.multi_crop", e))?;
        }
        self.encoder_spec().validate().map_err(|e| field("model", e))?;
        let o = &self.optim;
        o.optimizer.validate().map_err(|e| field("optim.optimizer", e))?;
        if o.epochs == 0 {
            return Err(field("optim.epochs", "must be positive"));
        }
        if o.batch_size < 2 {
            return Err(field("optim.batch_size", "must be at least 2"));
        }
        let e = &self.eval;
        if e.knn.k == 0 || !(e.knn.temperature > 0.0) {
            return Err(field("eval.knn", "k must be positive and temperature > 0"));
        }
        if e.probe.lr_grid.is_empty() || e.probe.lr_grid.iter().any(|lr| !(*lr > 0.0)) || e.probe.epochs == 0 {
            return Err(field("eval.probe", "needs positive learning rates and epochs"));
        }
        for (i, c) in e.corruptions.iter().enumerate() {
            c.validate().map_err(|err| field(&format!("eval.corruptions[{i}]"), err))?;
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        if self.depth.enabled { 4 } else { 3 }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec { backbone: self.model.backbone, in_channels: self.in_channels(), feature_dim: self.model.feature_dim }
    }

    pub fn policy(&self) -> AugmentationPolicy {
        AugmentationPolicy {
            base: self.augment.clone(),
            use_depth: self.depth.enabled,
            dropout: DepthDropout { p: self.depth.dropout },
            use_3d_views: self.views.enabled,
            q: self.views.q,
        }
    }

    /// The fully resolved document, defaults included.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// First 8 hex digits of the SHA-256 of the resolved config.
    pub fn hash8(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(&self.to_value()).expect("config serializes"));
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    /// `{method}_{dataset}_{seed}_{hash8}`.
    pub fn run_name(&self) -> String {
        format!("{}_{}_{}_{}", self.method.name(), self.dataset.name(), self.optim.seed, self.hash8())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_value(cfg.to_value()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let err = RunConfig::from_value(json!({"depth": {"dropuot": 0.1}})).unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
        assert!(err.to_string().contains("dropuot"), "{err}");
    }

    #[test]
    fn overrides_nest_and_parse() {
        let mut doc = json!({});
        apply_override(&mut doc, "depth.dropout=0.2").unwrap();
        apply_override(&mut doc, "dataset.root=/tmp/x").unwrap();
        apply_override(&mut doc, "method.name=simsiam").unwrap();
        let cfg = RunConfig::from_value(doc).unwrap();
        assert_eq!(cfg.depth.dropout, 0.2);
        assert_eq!(cfg.dataset.root, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.method.name(), "simsiam");
        assert!(apply_override(&mut json!({}), "novalue").is_err());
        assert!(apply_override(&mut json!({}), "a..b=1").is_err());
    }

    #[test]
    fn probabilities_are_checked() {
        let mut cfg = RunConfig::default();
        cfg.depth.dropout = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.views.q = -0.1;
        assert!(matches!(cfg.validate(), Err(ConfigError::Field { field, .. }) if field == "views.q"));
    }

    #[test]
    fn hash_tracks_behavior() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.run_name(), b.run_name());
        b.depth.dropout = 0.2;
        assert_ne!(a.hash8(), b.hash8());
        assert!(a.run_name().starts_with("byol_synthetic_0_"));
    }
}
