//! Calibrated emotion analyzer: a small frozen attention-pooled classifier
//! over instruction embeddings whose linear maps carry trainable LoRA
//! adapters. Only the adapters are updated during calibration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::iec::entity::{multi_hot, require_emotion, EmotionEntity, EntityAnalyzer};
use crate::iec::lora::LoraLinear;
use crate::numerics::ops::sigmoid;
use crate::numerics::{adam_step, AdamConfig, ParamStore, Tape, Tensor2D, Var};
use crate::textfront::{embed_text, InstructionRecord};

pub const HEAD_BIAS: &str = "analyzer.head.bias";
const POOL_GAMMA: &str = "analyzer.pool_ln.gamma";
const POOL_BETA: &str = "analyzer.pool_ln.beta";
const POOL_QUERY: &str = "analyzer.pool_query";

#[derive(Clone, Debug)]
pub struct EmotionClassifier {
    pub dim: usize,
    pub rank: usize,
    pub query: LoraLinear,
    pub key: LoraLinear,
    pub value: LoraLinear,
    pub feed_forward: LoraLinear,
    pub head: LoraLinear,
}

impl EmotionClassifier {
    pub fn new(dim: usize, rank: usize) -> Self {
        Self {
            dim,
            rank,
            query: LoraLinear::new("analyzer.q", dim, dim, rank),
            key: LoraLinear::new("analyzer.k", dim, dim, rank),
            value: LoraLinear::new("analyzer.v", dim, dim, rank),
            feed_forward: LoraLinear::new("analyzer.ff", dim, dim, rank),
            head: LoraLinear::new("analyzer.head", dim, EmotionEntity::COUNT, rank),
        }
    }

    pub fn layers(&self) -> [&LoraLinear; 5] {
        [&self.query, &self.key, &self.value, &self.feed_forward, &self.head]
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in self.layers() {
            l.init(store, &mut rng);
        }
        let q: Vec<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        store.insert_frozen(POOL_QUERY, Tensor2D::row_vector(q.iter().map(|x| x / norm).collect()));
        store.insert_frozen(HEAD_BIAS, Tensor2D::zeros(1, EmotionEntity::COUNT));
        store.insert_frozen(POOL_GAMMA, Tensor2D::filled(1, self.dim, 1.0));
        store.insert_frozen(POOL_BETA, Tensor2D::zeros(1, self.dim));
    }

    /// `1 × 7` entity logits for an embedded instruction. A single query
    /// (the frozen pooling vector through the adapted `q` map) attends over
    /// the tokens.
    pub fn logits_tape(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let seed = tape.param(store, POOL_QUERY)?;
        let q = self.query.forward(tape, store, seed)?;
        let k = self.key.forward(tape, store, x)?;
        let v = self.value.forward(tape, store, x)?;
        let scores = tape.matmul_bt(q, k)?;
        let scores = tape.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let attn = tape.softmax_rows(scores)?;
        let mixed = tape.matmul(attn, v)?;
        let ff = self.feed_forward.forward(tape, store, mixed)?;
        let ff = tape.tanh(ff);
        let pooled = tape.add(mixed, ff)?;
        let gamma = tape.param(store, POOL_GAMMA)?;
        let beta = tape.param(store, POOL_BETA)?;
        let pooled = tape.layer_norm(pooled, gamma, beta, crate::layers::LN_EPS)?;
        let logits = self.head.forward(tape, store, pooled)?;
        let bias = tape.param(store, HEAD_BIAS)?;
        tape.add_row(logits, bias)
    }

    /// Mean binary cross-entropy against the multi-hot ground truth.
    pub fn loss_tape(&self, tape: &mut Tape, store: &ParamStore, text: &str, truth: &[EmotionEntity]) -> Result<Var> {
        let x = tape.constant(embed_text(text, self.dim)?);
        let logits = self.logits_tape(tape, store, x)?;
        tape.bce_with_logits(logits, &Tensor2D::row_vector(multi_hot(truth)))
    }

    pub fn logits(&self, store: &ParamStore, text: &str) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(embed_text(text, self.dim)?);
        let l = self.logits_tape(&mut tape, store, x)?;
        Ok(tape.value(l).data().to_vec())
    }
}

/// Entities whose probability reaches `threshold` (ties included), in
/// vocabulary order; `[neutral]` when none do.
pub fn decide(logits: &[f64], threshold: f64) -> Vec<EmotionEntity> {
    let picked: Vec<EmotionEntity> = EmotionEntity::ALL
        .into_iter()
        .zip(logits)
        .filter(|(_, &z)| sigmoid(z) >= threshold)
        .map(|(e, _)| e)
        .collect();
    if picked.is_empty() {
        vec![EmotionEntity::Neutral]
    } else {
        picked
    }
}

#[derive(Clone, Debug)]
pub struct CalibratedAnalyzer {
    pub classifier: EmotionClassifier,
    pub store: ParamStore,
    pub threshold: f64,
}

impl CalibratedAnalyzer {
    pub fn new(dim: usize, rank: usize, threshold: f64, seed: u64) -> Self {
        let classifier = EmotionClassifier::new(dim, rank);
        let mut store = ParamStore::new();
        classifier.init(&mut store, seed);
        Self {
            classifier,
            store,
            threshold,
        }
    }

    /// Checksum over the frozen base weights.
    pub fn base_checksum(&self) -> String {
        self.store.checksum(|_, e| e.frozen)
    }

    pub fn adapter_checksum(&self) -> String {
        self.store.checksum(|_, e| !e.frozen)
    }
}

impl EntityAnalyzer for CalibratedAnalyzer {
    fn analyze(&self, rec: &InstructionRecord) -> Result<Vec<EmotionEntity>> {
        analyze_calibrated(rec, self)
    }
}

pub fn analyze_calibrated(rec: &InstructionRecord, analyzer: &CalibratedAnalyzer) -> Result<Vec<EmotionEntity>> {
    require_emotion(rec)?;
    let logits = analyzer.classifier.logits(&analyzer.store, &rec.text)?;
    Ok(decide(&logits, analyzer.threshold))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub epoch_losses: Vec<f64>,
    pub base_checksum_before: String,
    pub base_checksum_after: String,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Samples whose gradients are averaged per Adam step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 40,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Trains the adapters of `analyzer` on `(instruction, ground truth)` pairs.
/// Sample order is reshuffled each epoch from `cfg.seed`.
pub fn calibrate_analyzer(
    train: &[(InstructionRecord, Vec<EmotionEntity>)],
    analyzer: &mut CalibratedAnalyzer,
    cfg: &CalibrationConfig,
) -> Result<CalibrationReport> {
    if train.is_empty() {
        return Err(invalid!("calibration set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid!("calibration batch_size must be at least 1"));
    }
    cfg.adam.validate()?;
    for (rec, truth) in train {
        require_emotion(rec)?;
        if truth.is_empty() {
            return Err(invalid!("`{}` has no ground-truth entities", rec.sample_id));
        }
    }
    let before = analyzer.base_checksum();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                let (rec, truth) = &train[i];
                let mut tape = Tape::new();
                let loss = analyzer
                    .classifier
                    .loss_tape(&mut tape, &analyzer.store, &rec.text, truth)?;
                let value = tape.scalar(loss);
                if !value.is_finite() {
                    return Err(crate::Error::NonFinite(format!(
                        "calibration loss on `{}` is {value}",
                        rec.sample_id
                    )));
                }
                total += value;
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64);
                let grads = tape.backward(scaled)?;
                analyzer.store.accumulate(&grads)?;
            }
            adam_step(&mut analyzer.store, &cfg.adam)?;
        }
        epoch_losses.push(total / train.len() as f64);
    }
    Ok(CalibrationReport {
        epoch_losses,
        base_checksum_before: before,
        base_checksum_after: analyzer.base_checksum(),
        steps: analyzer.store.step_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iec::lora::lora_forward;
    use crate::numerics::ops::softmax_rows;
    use crate::textfront::{InstructionKind, InstructionSource};

    fn emo(id: &str, text: &str) -> InstructionRecord {
        InstructionRecord::new(id, InstructionKind::Emotion, text, InstructionSource::Synthetic).unwrap()
    }

    // Straight-line evaluation with the base weights only.
    fn base_logits(a: &CalibratedAnalyzer, text: &str) -> Vec<f64> {
        let s = &a.store;
        let x = embed_text(text, a.classifier.dim).unwrap();
        let lin = |m: &Tensor2D, name: &str| -> Tensor2D {
            let w = s.get(name).unwrap();
            m.matmul(&w.transpose()).unwrap()
        };
        let q = lin(s.get("analyzer.pool_query").unwrap(), "analyzer.q.w");
        let k = lin(&x, "analyzer.k.w");
        let v = lin(&x, "analyzer.v.w");
        let att = softmax_rows(&q.matmul_bt(&k).unwrap().scale(1.0 / (a.classifier.dim as f64).sqrt()))
            .unwrap()
            .matmul(&v)
            .unwrap();
        let pooled = att.add(&lin(&att, "analyzer.ff.w").map(f64::tanh)).unwrap();
        let pooled = crate::numerics::layer_norm(pooled.data(), &[1.0; 32], &[0.0; 32], crate::layers::LN_EPS).unwrap();
        let head = s.get("analyzer.head.w").unwrap();
        let id = crate::iec::lora::LoraAdapter::identity(7, a.classifier.dim, "head");
        lora_forward(&pooled, head, &id).unwrap()
    }

    #[test]
    fn untrained_matches_frozen_base() {
        let a = CalibratedAnalyzer::new(32, 4, 0.5, 11);
        for text in ["a furious and bitter tone", "calm", "happy then sad"] {
            let rec = emo("x", text);
            let ours = analyze_calibrated(&rec, &a).unwrap();
            let base = decide(&base_logits(&a, text), 0.5);
            assert_eq!(ours, base);
            let l1 = a.classifier.logits(&a.store, text).unwrap();
            let l2 = base_logits(&a, text);
            for (x, y) in l1.iter().zip(&l2) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_analysis() {
        let a = CalibratedAnalyzer::new(32, 4, 0.5, 3);
        let rec = emo("x", "trembling with fear");
        assert_eq!(
            analyze_calibrated(&rec, &a).unwrap(),
            analyze_calibrated(&rec, &a).unwrap()
        );
    }

    #[test]
    fn zero_epochs_noop_and_empty_rejected() {
        let mut a = CalibratedAnalyzer::new(16, 2, 0.5, 1);
        let before = a.adapter_checksum();
        let train = vec![(emo("a", "happy"), vec![EmotionEntity::Happy])];
        calibrate_analyzer(
            &train,
            &mut a,
            &CalibrationConfig {
                epochs: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(before, a.adapter_checksum());
        assert!(calibrate_analyzer(&[], &mut a, &CalibrationConfig::default()).is_err());
    }

    #[test]
    fn training_keeps_base_frozen() {
        let mut a = CalibratedAnalyzer::new(16, 2, 0.5, 1);
        let train = vec![
            (emo("a", "so happy today"), vec![EmotionEntity::Happy]),
            (emo("b", "quite sad now"), vec![EmotionEntity::Sad]),
        ];
        let before_adapters = a.adapter_checksum();
        let rep = calibrate_analyzer(
            &train,
            &mut a,
            &CalibrationConfig {
                epochs: 3,
                batch_size: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.base_checksum_before, rep.base_checksum_after);
        assert_ne!(before_adapters, a.adapter_checksum());
        assert_eq!(rep.epoch_losses.len(), 3);
    }

    #[test]
    fn threshold_ties_included() {
        let mut logits = vec![-5.0; 7];
        logits[2] = 0.0;
        assert_eq!(decide(&logits, 0.5), [EmotionEntity::Disgust]);
        assert_eq!(decide(&[-5.0; 7], 0.5), [EmotionEntity::Neutral]);
    }
}
