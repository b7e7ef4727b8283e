use ndarray::{concatenate, s, ArrayD, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{BasicBlock, BatchNorm, Conv2d, Layer, Sequential};
use super::{Result, SslError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Four conv-BN-ReLU blocks of width 16, 32, 64 and `feature_dim`.
    TinyConv,
    /// ResNet-18 with a 3x3 stem for small images; stage widths are
    /// `feature_dim / 8 * [1, 2, 4, 8]`.
    #[serde(rename = "resnet18")]
    ResNet18,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub backbone: Backbone,
    pub in_channels: usize,
    pub feature_dim: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { backbone: Backbone::TinyConv, in_channels: 3, feature_dim: 128 }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 3 | 4) {
            return Err(SslError::Config(format!("in_channels must be 3 or 4, got {}", self.in_channels)));
        }
        if self.feature_dim < 8 {
            return Err(SslError::Config(format!("feature_dim must be at least 8, got {}", self.feature_dim)));
        }
        if self.backbone == Backbone::ResNet18 && self.feature_dim % 8 != 0 {
            return Err(SslError::Config("resnet18 feature_dim must be a multiple of 8".into()));
        }
        Ok(())
    }

    /// Builds the backbone, ending in global average pooling.
    pub fn build<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Sequential> {
        self.validate()?;
        let mut layers = Vec::new();
        match self.backbone {
            Backbone::TinyConv => {
                let widths = [16, 32, 64, self.feature_dim];
                let mut in_c = self.in_channels;
                for (i, &w) in widths.iter().enumerate() {
                    let stride = if i == 0 { 1 } else { 2 };
                    layers.push(Layer::Conv(Conv2d::new(in_c, w, 3, stride, 1, rng)));
                    layers.push(Layer::BatchNorm(BatchNorm::new(w, true)));
                    layers.push(Layer::Relu);
                    in_c = w;
                }
            }
            Backbone::ResNet18 => {
                let base = self.feature_dim / 8;
                layers.push(Layer::Conv(Conv2d::new(self.in_channels, base, 3, 1, 1, rng)));
                layers.push(Layer::BatchNorm(BatchNorm::new(base, true)));
                layers.push(Layer::Relu);
                let mut in_c = base;
                for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
                    let w = base * mult;
                    for block in 0..2 {
                        let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                        layers.push(Layer::Block(Box::new(BasicBlock::new(in_c, w, stride, rng))));
                        in_c = w;
                    }
                }
            }
        }
        layers.push(Layer::GlobalAvgPool);
        Ok(Sequential::new(layers))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptMode {
    Zero,
    MeanRgb,
}

/// Appends a depth filter slice to `(out, k, k, 3)` first-layer weights.
pub fn adapt_input_layer(weights: &ArrayD<f64>, mode: AdaptMode) -> Result<ArrayD<f64>> {
    if weights.ndim() != 4 || weights.shape()[3] != 3 {
        return Err(SslError::Shape(format!("expected (out, k, k, 3) weights, got {:?}", weights.shape())));
    }
    let extra = match mode {
        AdaptMode::Zero => ArrayD::zeros(weights.slice(s![.., .., .., 0..1]).shape()),
        AdaptMode::MeanRgb => weights.mean_axis(Axis(3)).expect("three channels").insert_axis(Axis(3)),
    };
    Ok(concatenate(Axis(3), &[weights.view(), extra.view()]).expect("matching shapes").as_standard_layout().into_owned())
}

/// Removes the depth filter slice from `(out, k, k, 4)` weights.
pub fn drop_depth_filters(weights: &ArrayD<f64>) -> Result<ArrayD<f64>> {
    if weights.ndim() != 4 || weights.shape()[3] != 4 {
        return Err(SslError::Shape(format!("expected (out, k, k, 4) weights, got {:?}", weights.shape())));
    }
    Ok(weights.slice(s![.., .., .., 0..3]).as_standard_layout().into_owned().into_dyn())
}

fn first_conv(encoder: &mut Sequential) -> Result<&mut Conv2d> {
    match encoder.layers.first_mut() {
        Some(Layer::Conv(c)) => Ok(c),
        _ => Err(SslError::Shape("encoder does not start with a convolution".into())),
    }
}

/// Converts a 3-channel encoder to take RGB-D input.
pub fn adapt_encoder(encoder: &mut Sequential, mode: AdaptMode) -> Result<()> {
    let conv = first_conv(encoder)?;
    conv.weight = super::nn::Param::new(adapt_input_layer(&conv.weight.value, mode)?);
    Ok(())
}

/// Converts an RGB-D encoder back to RGB input.
pub fn strip_depth_input(encoder: &mut Sequential) -> Result<()> {
    let conv = first_conv(encoder)?;
    conv.weight = super::nn::Param::new(drop_depth_filters(&conv.weight.value)?);
    Ok(())
}
