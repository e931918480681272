use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schedule::{ScaleSchedule, Variant, DEFAULT_BASE_STRIDES};
use crate::error::{invalid, Result};

pub const ANCHORS_PER_CELL: usize = 3;
pub const DEFAULT_NECK_CHANNELS: usize = 112;
pub const DEFAULT_INPUT_SIZE: usize = 224;
pub const DEFAULT_SFB_COUNT: usize = 3;
/// Output widths of the five stride-2 backbone stages (strides 2..32).
pub const DEFAULT_BACKBONE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

/// Architecture description; serialized as the model config file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_neck")]
    pub neck_channels: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backbone")]
    pub backbone_widths: Vec<usize>,
    #[serde(default)]
    pub sol_enabled: bool,
    #[serde(default = "default_sfb_count")]
    pub sfb_count: usize,
}

fn default_input_size() -> usize {
    DEFAULT_INPUT_SIZE
}
fn default_neck() -> usize {
    DEFAULT_NECK_CHANNELS
}
fn default_backbone() -> Vec<usize> {
    DEFAULT_BACKBONE_WIDTHS.to_vec()
}
fn default_sfb_count() -> usize {
    DEFAULT_SFB_COUNT
}

impl ModelConfig {
    pub fn new(variant: Variant, num_classes: usize) -> Self {
        Self {
            variant,
            input_size: DEFAULT_INPUT_SIZE,
            neck_channels: DEFAULT_NECK_CHANNELS,
            num_classes,
            seed: 0,
            backbone_widths: default_backbone(),
            sol_enabled: false,
            sfb_count: DEFAULT_SFB_COUNT,
        }
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn with_neck_channels(mut self, c: usize) -> Self {
        self.neck_channels = c;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_sol(mut self, sol: bool) -> Self {
        self.sol_enabled = sol;
        self
    }

    pub fn with_backbone_widths(mut self, widths: Vec<usize>) -> Self {
        self.backbone_widths = widths;
        self
    }

    pub fn schedule(&self) -> Result<ScaleSchedule> {
        ScaleSchedule::build(self.variant, DEFAULT_BASE_STRIDES)
    }

    /// Channels of the per-anchor prediction vector: box (4), objectness, classes.
    pub fn prediction_len(&self) -> usize {
        5 + self.num_classes
    }

    pub fn head_channels(&self) -> usize {
        ANCHORS_PER_CELL * self.prediction_len()
    }

    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule()?;
        if !self.input_size.is_multiple_of(32) || self.input_size == 0 {
            return Err(invalid(format!("input size {} is not a positive multiple of 32", self.input_size)));
        }
        if self.input_size < schedule.max_stride() {
            return Err(invalid(format!(
                "input size {} is smaller than the largest stride {}",
                self.input_size,
                schedule.max_stride()
            )));
        }
        if self.neck_channels == 0 || self.num_classes == 0 {
            return Err(invalid("neck_channels and num_classes must be positive"));
        }
        if self.backbone_widths.len() != 5 || self.backbone_widths.contains(&0) {
            return Err(invalid(format!(
                "backbone_widths must list 5 positive stage widths, got {:?}",
                self.backbone_widths
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
