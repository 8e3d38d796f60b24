//! Emotion instructions to entities, entities to per-phoneme pitch and
//! energy.

pub mod analyzer;
pub mod entity;
pub mod lora;
pub mod prosody;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analyzer::{
    analyze_calibrated, calibrate_analyzer, decide, CalibratedAnalyzer, CalibrationConfig, CalibrationReport,
    EmotionClassifier,
};
pub use entity::{analyze_rule, multi_hot, EmotionEntity, EntityAnalyzer, KeywordMap, RuleAnalyzer};
pub use lora::{lora_forward, lora_forward_merged, LoraAdapter, LoraLinear};
pub use prosody::{embed_entities, predict_prosody, ProsodyModel, ProsodyPrediction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnalyzerKind {
    #[default]
    Rule,
    Calibrated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IecConfig {
    pub lora_rank: usize,
    pub threshold: f64,
    pub analyzer: AnalyzerKind,
}

impl Default for IecConfig {
    fn default() -> Self {
        Self {
            lora_rank: 4,
            threshold: 0.5,
            analyzer: AnalyzerKind::Rule,
        }
    }
}

impl IecConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "iec.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}
