use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dropout::{depth_dropout, DepthDropout};
use super::geometric::{apply_paired, sample_geometric};
use super::photometric::{apply_photometric, BaseRecipe};
use super::{AugmentError, Result};
use crate::geometry::{DepthMap, ViewSpec};
use crate::imageio::Image;

/// One pre-rendered novel view.
#[derive(Debug, Clone, PartialEq)]
pub struct BankView {
    pub spec: ViewSpec,
    pub rgb: Image,
    pub depth: Option<DepthMap>,
}

/// The `k` views pre-rendered for one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ViewBank {
    pub views: Vec<BankView>,
}

impl ViewBank {
    pub fn k(&self) -> usize {
        self.views.len()
    }
}

/// A training sample as seen by the augmentation pipeline.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub rgb: &'a Image,
    pub depth: Option<&'a DepthMap>,
    pub view_bank: Option<&'a ViewBank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    pub base: BaseRecipe,
    pub use_depth: bool,
    pub dropout: DepthDropout,
    pub use_3d_views: bool,
    /// Probability of the full base recipe on top of a bank view; otherwise
    /// only crop and flip are applied.
    pub q: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            base: BaseRecipe::default(),
            use_depth: false,
            dropout: DepthDropout::default(),
            use_3d_views: false,
            q: 1.0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.dropout.validate()?;
        if !(0.0..=1.0).contains(&self.q) {
            return Err(AugmentError::Invalid(format!("q = {} outside [0, 1]", self.q)));
        }
        Ok(())
    }

    /// Fails when the sample lacks a resource this policy needs.
    pub fn check_sample(&self, sample: &Sample) -> Result<()> {
        if self.use_3d_views {
            let bank = sample
                .view_bank
                .filter(|b| b.k() > 0)
                .ok_or_else(|| AugmentError::MissingResource("3D views enabled but the sample has no view bank".into()))?;
            if self.use_depth && bank.views.iter().any(|v| v.depth.is_none()) {
                return Err(AugmentError::MissingResource("depth enabled but a bank view has no depth".into()));
            }
        } else if self.use_depth && sample.depth.is_none() {
            return Err(AugmentError::MissingResource("depth enabled but the sample has no depth map".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Base2d,
    MpiView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedView {
    pub rgb: Image,
    pub depth: Option<DepthMap>,
    pub dropout_applied: bool,
    pub provenance: Provenance,
    /// Index of the bank view used, if any.
    pub bank_index: Option<usize>,
}

impl AugmentedView {
    /// RGB with depth appended as a fourth channel, when present.
    pub fn stacked(&self) -> Image {
        match &self.depth {
            None => self.rgb.clone(),
            Some(d) => {
                let (c, h, w) = self.rgb.dim();
                Image::from_shape_fn((c + 1, h, w), |(k, y, x)| if k < c { self.rgb[[k, y, x]] } else { d.values()[[y, x]] })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub a: AugmentedView,
    pub b: AugmentedView,
}

/// One view of the plain 2D recipe: crop and flip, then photometric ops.
pub fn base_view<R: Rng + ?Sized>(rgb: &Image, recipe: &BaseRecipe, rng: &mut R) -> Result<Image> {
    let (_, h, w) = rgb.dim();
    let params = sample_geometric(rng, (h, w), recipe);
    let (cropped, _) = apply_paired(rgb, None, &params)?;
    Ok(apply_photometric(&cropped, recipe, rng))
}

fn make_view<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentationPolicy, recipe: &BaseRecipe, rng: &mut R) -> Result<AugmentedView> {
    let (rgb, depth, full, provenance, bank_index) = if policy.use_3d_views {
        let bank = sample.view_bank.expect("checked");
        let idx = rng.random_range(0..bank.k());
        let full = rng.random::<f64>() < policy.q;
        let v = &bank.views[idx];
        (&v.rgb, v.depth.as_ref(), full, Provenance::MpiView, Some(idx))
    } else {
        (sample.rgb, sample.depth, true, Provenance::Base2d, None)
    };
    let depth = if policy.use_depth { depth } else { None };
    let (_, h, w) = rgb.dim();
    let params = sample_geometric(rng, (h, w), recipe);
    let (mut out_rgb, out_depth) = apply_paired(rgb, depth, &params)?;
    if full {
        out_rgb = apply_photometric(&out_rgb, recipe, rng);
    }
    let (out_depth, dropped) = match out_depth {
        Some(d) => {
            let (d, dropped) = depth_dropout(d, &policy.dropout, rng);
            (Some(d), dropped)
        }
        None => (None, false),
    };
    Ok(AugmentedView { rgb: out_rgb, depth: out_depth, dropout_applied: dropped, provenance, bank_index })
}

/// Two independently augmented views of `sample`.
pub fn make_pair<R: Rng + ?Sized>(sample: &Sample, policy: &AugmentationPolicy, rng: &mut R) -> Result<AugmentedPair> {
    policy.check_sample(sample)?;
    let a = make_view(sample, policy, &policy.base, rng)?;
    let b = make_view(sample, policy, &policy.base, rng)?;
    Ok(AugmentedPair { a, b })
}

/// Multi-crop layout: global crops first, then the smaller local crops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiCrop {
    pub n_global: usize,
    pub n_local: usize,
    pub global_scale: (f64, f64),
    pub local_scale: (f64, f64),
    pub local_size: usize,
}

impl Default for MultiCrop {
    fn default() -> Self {
        Self { n_global: 2, n_local: 6, global_scale: (0.14, 1.0), local_scale: (0.05, 0.14), local_size: 16 }
    }
}

impl MultiCrop {
    pub fn validate(&self) -> Result<()> {
        if self.n_global < 2 {
            return Err(AugmentError::Invalid("multi-crop needs at least two global crops".into()));
        }
        if self.local_size == 0 || self.n_local > 0 && !(self.local_scale.0 > 0.0 && self.local_scale.0 <= self.local_scale.1) {
            return Err(AugmentError::Invalid("local crop settings invalid".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n_global + self.n_local
    }
}

/// Global then local crops of `sample`, each built like a pair view.
pub fn make_crops<R: Rng + ?Sized>(
    sample: &Sample,
    policy: &AugmentationPolicy,
    crops: &MultiCrop,
    rng: &mut R,
) -> Result<Vec<AugmentedView>> {
    policy.check_sample(sample)?;
    let global = BaseRecipe { crop_scale: crops.global_scale, ..policy.base.clone() };
    let local = BaseRecipe { crop_scale: crops.local_scale, out_size: crops.local_size, ..policy.base.clone() };
    let mut out = Vec::with_capacity(crops.total());
    for _ in 0..crops.n_global {
        out.push(make_view(sample, policy, &global, rng)?);
    }
    for _ in 0..crops.n_local {
        out.push(make_view(sample, policy, &local, rng)?);
    }
    Ok(out)
}
