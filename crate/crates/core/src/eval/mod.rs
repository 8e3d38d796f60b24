//! Duration divergence, WER, emotion similarity, and run reports.

pub mod metrics;
pub mod report;

use serde::{Deserialize, Serialize};

use crate::iec::EmotionEntity;

pub use metrics::{
    divergence, duration_divergence, edit_distance, emo_sim, mean_abs_error, normalize_transcript, wer, wer_text,
    DivergenceKind,
};
pub use report::{build_report, read_report, render_table, write_report, MetricsReport, SampleMetrics};

/// One model output record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    /// Frames per phoneme after video-length scaling.
    pub durations: Vec<f64>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub entities: Vec<EmotionEntity>,
    /// Hypothesis transcript for WER.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub dd: DivergenceKind,
}
