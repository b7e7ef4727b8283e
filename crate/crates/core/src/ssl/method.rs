use serde::{Deserialize, Serialize};

use super::optim::TauSchedule;
use super::sinkhorn::SinkhornConfig;
use super::{Result, SslError};
use crate::augment::MultiCrop;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ByolConfig {
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub pred_hidden: usize,
    pub tau: TauSchedule,
}

impl Default for ByolConfig {
    fn default() -> Self {
        Self { proj_hidden: 4096, proj_out: 256, pred_hidden: 4096, tau: TauSchedule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSiamConfig {
    /// Width of all three projector layers.
    pub proj_dim: usize,
    pub pred_hidden: usize,
}

impl Default for SimSiamConfig {
    fn default() -> Self {
        Self { proj_dim: 2048, pred_hidden: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwavConfig {
    pub proj_hidden: usize,
    pub proj_out: usize,
    pub prototypes: usize,
    pub temperature: f64,
    pub sinkhorn: SinkhornConfig,
    pub multi_crop: MultiCrop,
}

impl Default for SwavConfig {
    fn default() -> Self {
        Self {
            proj_hidden: 2048,
            proj_out: 128,
            prototypes: 256,
            temperature: 0.1,
            sinkhorn: SinkhornConfig::default(),
            multi_crop: MultiCrop::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MethodConfig {
    Byol(ByolConfig),
    #[serde(rename = "simsiam")]
    SimSiam(SimSiamConfig),
    Swav(SwavConfig),
}

impl Default for MethodConfig {
    fn default() -> Self {
        MethodConfig::Byol(ByolConfig::default())
    }
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Byol(_) => "byol",
            MethodConfig::SimSiam(_) => "simsiam",
            MethodConfig::Swav(_) => "swav",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SslError::Config(m.to_string()));
        match self {
            MethodConfig::Byol(c) => {
                if c.proj_hidden == 0 || c.proj_out == 0 || c.pred_hidden == 0 {
                    return bad("byol head dims must be positive");
                }
                if !(0.0..=1.0).contains(&c.tau.base) {
                    return bad("byol tau must lie in [0, 1]");
                }
            }
            MethodConfig::SimSiam(c) => {
                if c.proj_dim == 0 || c.pred_hidden == 0 {
                    return bad("simsiam head dims must be positive");
                }
            }
            MethodConfig::Swav(c) => {
                if c.proj_hidden == 0 || c.proj_out == 0 || c.prototypes == 0 {
                    return bad("swav dims must be positive");
                }
                if !(c.temperature > 0.0) || !(c.sinkhorn.epsilon > 0.0) || c.sinkhorn.iterations == 0 {
                    return bad("swav temperature, epsilon and iterations must be positive");
                }
                c.multi_crop.validate().map_err(|e| SslError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}
