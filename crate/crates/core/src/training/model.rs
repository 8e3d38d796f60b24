//! Both prediction paths behind one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::idd::{DurationModel, IddConfig};
use crate::iec::{embed_entities, EmotionEntity, EntityAnalyzer, ProsodyModel};
use crate::numerics::{ParamStore, Tape, Tensor2D, Var};
use crate::textfront::{embed_instruction, PhonemeEmbedder, PhonemeInventory};
use crate::training::{LossWeights, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Instruction and entity embedding width.
    pub d_gte: usize,
    /// Phoneme feature width.
    pub d_m: usize,
    /// Recurrent predictor state size.
    pub hidden: usize,
    pub mlp_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_gte: 64,
            d_m: 32,
            hidden: 32,
            mlp_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_gte < 8 || self.d_m == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config(format!("model sizes out of range: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DubbingModel {
    pub config: ModelConfig,
    pub embedder: PhonemeEmbedder,
    pub duration: DurationModel,
    pub prosody: ProsodyModel,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub log_durations: Var,
    /// `exp(log_durations)`, in frames.
    pub durations: Var,
    pub pitch: Var,
    pub energy: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub duration: Var,
    pub emotion: Var,
    pub total: Var,
}

fn column(v: &[f64]) -> Tensor2D {
    Tensor2D::new(v.len(), 1, v.to_vec()).expect("length matches")
}

impl DubbingModel {
    pub fn new(config: ModelConfig, idd: IddConfig) -> Result<Self> {
        config.validate()?;
        idd.validate()?;
        Ok(Self {
            embedder: PhonemeEmbedder::new(PhonemeInventory::default(), config.d_m),
            duration: DurationModel::new(idd, config.d_gte, config.d_m, config.hidden, config.mlp_hidden),
            prosody: ProsodyModel::new(config.d_gte, config.d_m, config.hidden),
            config,
        })
    }

    /// Fresh parameters drawn from one seeded generator.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.embedder.init_params(&mut store, &mut rng);
        self.duration.init(&mut store, &mut rng);
        self.prosody.init(&mut store, &mut rng);
        store
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        sample: &Sample,
        entities: &[EmotionEntity],
    ) -> Result<ForwardVars> {
        let phonemes = self.embedder.forward_tape(tape, store, &sample.phonemes)?;
        let instruction = tape.constant(embed_instruction(&sample.dur_instruction, self.config.d_gte)?);
        let dur = self.duration.forward_tape(tape, store, instruction, phonemes)?;
        let durations = tape.exp(dur.log_durations);
        let ent = tape.constant(embed_entities(entities, self.config.d_gte)?);
        let pros = self.prosody.forward_tape(tape, store, ent, phonemes)?;
        Ok(ForwardVars {
            log_durations: dur.log_durations,
            durations,
            pitch: pros.pitch,
            energy: pros.energy,
        })
    }

    /// Losses on one sample with ground-truth entities.
    pub fn losses(&self, tape: &mut Tape, store: &ParamStore, sample: &Sample, w: &LossWeights) -> Result<LossVars> {
        let f = self.forward(tape, store, sample, &sample.gt_entities)?;
        let duration = tape.mean_abs_diff(f.durations, &column(&sample.gt_durations))?;
        let pitch = tape.mean_abs_diff(f.pitch, &column(&sample.gt_pitch))?;
        let energy = tape.mean_abs_diff(f.energy, &column(&sample.gt_energy))?;
        let emotion = tape.add(pitch, energy)?;
        let a = tape.scale(duration, w.lambda1);
        let b = tape.scale(emotion, w.lambda2);
        let total = tape.add(a, b)?;
        Ok(LossVars {
            duration,
            emotion,
            total,
        })
    }

    /// Inference: entities come from `analyzer`, durations are rescaled to
    /// the sample's video length.
    pub fn predict(&self, store: &ParamStore, sample: &Sample, analyzer: &dyn EntityAnalyzer) -> Result<Prediction> {
        let entities = analyzer.analyze(&sample.emo_instruction)?;
        self.predict_with_entities(store, sample, entities)
    }

    pub fn predict_with_entities(
        &self,
        store: &ParamStore,
        sample: &Sample,
        entities: Vec<EmotionEntity>,
    ) -> Result<Prediction> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, store, sample, &entities)?;
        let raw = tape.value(f.durations).data().to_vec();
        let scaled = crate::idd::scale_durations(&raw, sample.video_frames, self.duration.config.scale_mode)?;
        Ok(Prediction {
            sample_id: sample.sample_id.clone(),
            durations: scaled.durations_frames,
            pitch: tape.value(f.pitch).data().to_vec(),
            energy: tape.value(f.energy).data().to_vec(),
            entities,
            transcript: Some(sample.script.clone()),
        })
    }
}
