//! Losses, the per-utterance training loop, and checkpoints.

pub mod checkpoint;
pub mod gradsuite;
pub mod model;
pub mod sample;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{adam_step, AdamConfig, ParamStore, Tape};

pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, CheckpointHeader, Encoding};
pub use gradsuite::{run_grad_suite, GradSuiteReport};
pub use model::{DubbingModel, ModelConfig};
pub use sample::{load_corpus, read_jsonl, write_jsonl, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 2.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!("loss weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid!("no phonemes"));
    }
    Ok(())
}

/// Mean absolute frame error.
pub fn loss_dur(pred: &[f64], gt: &[f64]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean over phonemes of `|Δpitch| + |Δenergy|`.
pub fn loss_emo(pred_pitch: &[f64], gt_pitch: &[f64], pred_energy: &[f64], gt_energy: &[f64]) -> Result<f64> {
    check_lengths(pred_pitch, gt_pitch)?;
    check_lengths(pred_energy, gt_energy)?;
    check_lengths(pred_pitch, pred_energy)?;
    Ok(loss_dur(pred_pitch, gt_pitch)? + loss_dur(pred_energy, gt_energy)?)
}

pub fn total_loss(l_dur: f64, l_emo: f64, w: &LossWeights) -> f64 {
    w.lambda1 * l_dur + w.lambda2 * l_emo
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 30,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// One line of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub sample_id: String,
    pub total: f64,
    pub duration: f64,
    pub emotion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrainStatus {
    Completed,
    /// Stopped before applying a step whose loss or gradient was not finite;
    /// the returned store holds the parameters from before that step.
    Aborted {
        step: u64,
        sample_id: String,
        reason: String,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub trace: Vec<StepRecord>,
    pub status: TrainStatus,
}

impl TrainOutcome {
    /// Mean total loss per epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.trace {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

/// Initializes from `cfg.seed` and trains.
pub fn train(model: &DubbingModel, corpus: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(model, model.init(cfg.seed), corpus, cfg)
}

/// Per-utterance Adam steps over `corpus` in its given order, `cfg.epochs`
/// times.
pub fn train_from(
    model: &DubbingModel,
    mut store: ParamStore,
    corpus: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(invalid!("training corpus is empty"));
    }
    cfg.adam.validate()?;
    cfg.weights.validate()?;
    let mut trace = Vec::with_capacity(cfg.epochs * corpus.len());
    for epoch in 0..cfg.epochs {
        for sample in corpus {
            let mut tape = Tape::new();
            let l = model.losses(&mut tape, &store, sample, &cfg.weights)?;
            let rec = StepRecord {
                epoch,
                step: store.step_count() + 1,
                sample_id: sample.sample_id.clone(),
                total: tape.scalar(l.total),
                duration: tape.scalar(l.duration),
                emotion: tape.scalar(l.emotion),
            };
            let abort = |reason: String| TrainStatus::Aborted {
                step: rec.step,
                sample_id: sample.sample_id.clone(),
                reason,
            };
            if !rec.total.is_finite() {
                log::error!("non-finite loss {} on `{}`", rec.total, sample.sample_id);
                let status = abort(format!("loss is {}", rec.total));
                return Ok(TrainOutcome { store, trace, status });
            }
            let grads = tape.backward(l.total)?;
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
                let status = abort(format!("gradient of `{name}` is not finite"));
                return Ok(TrainOutcome { store, trace, status });
            }
            store.accumulate(&grads)?;
            adam_step(&mut store, &cfg.adam)?;
            trace.push(rec);
        }
        log::info!("epoch {epoch} done");
    }
    Ok(TrainOutcome {
        store,
        trace,
        status: TrainStatus::Completed,
    })
}

/// Mean `(total, duration, emotion)` loss over `corpus` without updating.
pub fn evaluate_losses(
    model: &DubbingModel,
    store: &ParamStore,
    corpus: &[Sample],
    w: &LossWeights,
) -> Result<(f64, f64, f64)> {
    if corpus.is_empty() {
        return Err(invalid!("empty corpus"));
    }
    let mut acc = (0.0, 0.0, 0.0);
    for s in corpus {
        let mut tape = Tape::new();
        let l = model.losses(&mut tape, store, s, w)?;
        acc.0 += tape.scalar(l.total);
        acc.1 += tape.scalar(l.duration);
        acc.2 += tape.scalar(l.emotion);
    }
    let n = corpus.len() as f64;
    Ok((acc.0 / n, acc.1 / n, acc.2 / n))
}
