use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::iec::EmotionEntity;
use crate::textfront::{InstructionKind, InstructionRecord, PhonemeInventory, PhonemeSequence};

/// One training or evaluation utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub sample_id: String,
    pub script: String,
    pub phonemes: PhonemeSequence,
    pub dur_instruction: InstructionRecord,
    pub emo_instruction: InstructionRecord,
    /// Frames per phoneme.
    pub gt_durations: Vec<f64>,
    pub gt_pitch: Vec<f64>,
    pub gt_energy: Vec<f64>,
    pub gt_entities: Vec<EmotionEntity>,
    pub video_frames: usize,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion_embedding: Option<Vec<f64>>,
}

impl Sample {
    pub fn validate(&self, inventory: &PhonemeInventory) -> Result<()> {
        let id = &self.sample_id;
        PhonemeSequence::new(self.phonemes.symbols().to_vec(), inventory)
            .map_err(|e| invalid!("sample `{id}`: {e}"))?;
        let n = self.phonemes.len();
        for (name, v) in [
            ("gt_durations", &self.gt_durations),
            ("gt_pitch", &self.gt_pitch),
            ("gt_energy", &self.gt_energy),
        ] {
            if v.len() != n {
                return Err(Error::Shape(format!(
                    "sample `{id}`: {name} has {} entries for {n} phonemes",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid!("sample `{id}`: {name} is not finite"));
            }
        }
        if self.gt_durations.iter().any(|d| *d <= 0.0) {
            return Err(invalid!("sample `{id}`: durations must be positive"));
        }
        if self.video_frames == 0 {
            return Err(invalid!("sample `{id}`: video_frames must be positive"));
        }
        if self.gt_entities.is_empty() {
            return Err(invalid!("sample `{id}`: no ground-truth entities"));
        }
        if self.dur_instruction.kind != InstructionKind::Duration
            || self.emo_instruction.kind != InstructionKind::Emotion
        {
            return Err(invalid!("sample `{id}`: instruction kinds are swapped"));
        }
        self.dur_instruction.validate()?;
        self.emo_instruction.validate()
    }
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &std::path::Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines file; blank lines are skipped and errors carry the
/// line number.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Fixture {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_corpus(path: &std::path::Path) -> Result<Vec<Sample>> {
    let samples: Vec<Sample> = read_jsonl(path)?;
    let inv = PhonemeInventory::default();
    for s in &samples {
        s.validate(&inv)?;
    }
    Ok(samples)
}
