//! Duration prototypes distilled from speaking-rate instructions.
//!
//! A bank of `K` learned slots attends over the embedded instruction for
//! `T` rounds with shared weights. Attention is normalized over the slots,
//! so slots compete for each instruction token. Each round the slots are
//! refreshed by a GRU and a residual MLP on their layer-normalized state.
//! Phoneme features then query the reduced prototypes through single-head
//! cross-attention, and a bidirectional recurrent predictor emits one
//! log-duration per phoneme. At inference the durations are rescaled to the
//! video length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::layers::{CrossAttention, Gru, LayerNorm, Linear, Mlp, RecurrentPredictor};
use crate::numerics::params::randn;
use crate::numerics::{ParamStore, Tape, Tensor2D, Var};

pub const SLOTS: &str = "idd.slots";

/// Added to the row sum by mean aggregation.
const MEAN_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// `u_k = Σ_n α_kn v_n`
    #[default]
    Sum,
    /// `u_k = Σ_n α_kn v_n / Σ_n α_kn`
    Mean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    #[default]
    Continuous,
    Integer,
}

impl std::str::FromStr for ScaleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "integer" => Ok(Self::Integer),
            other => Err(invalid!("unknown scale mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IddConfig {
    pub prototypes: usize,
    pub iterations: usize,
    pub aggregate: Aggregate,
    pub scale_mode: ScaleMode,
}

impl Default for IddConfig {
    fn default() -> Self {
        Self {
            prototypes: 10,
            iterations: 3,
            aggregate: Aggregate::Sum,
            scale_mode: ScaleMode::Continuous,
        }
    }
}

impl IddConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prototypes == 0 || self.iterations == 0 {
            return Err(Error::Config(format!(
                "idd.prototypes and idd.iterations must be >= 1 (got {}, {})",
                self.prototypes, self.iterations
            )));
        }
        Ok(())
    }
}

/// Initial slot vectors and the number of refinement rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotBank {
    pub slots: Tensor2D,
    pub iterations: usize,
}

impl SlotBank {
    pub fn new(slots: Tensor2D, iterations: usize) -> Result<Self> {
        if slots.rows() == 0 || iterations == 0 {
            return Err(invalid!("slot bank needs K >= 1 and T >= 1"));
        }
        slots.ensure_finite("slot bank")?;
        Ok(Self { slots, iterations })
    }

    pub fn from_store(store: &ParamStore, iterations: usize) -> Result<Self> {
        Self::new(store.get(SLOTS)?.clone(), iterations)
    }

    pub fn prototypes(&self) -> usize {
        self.slots.rows()
    }
}

/// Tape handles produced by one distillation pass.
#[derive(Clone, Debug)]
pub struct DistillTrace {
    pub output: Var,
    /// Slots after the last round, before the output normalization.
    pub slots: Var,
    /// `K × L` slot-attention weights of every round.
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct SlotDistiller {
    pub dim: usize,
    pub aggregate: Aggregate,
    pub key: Linear,
    pub value: Linear,
    pub query: Linear,
    pub gru: Gru,
    pub norm: LayerNorm,
    pub mlp: Mlp,
    /// Applied to the slots after the last round.
    pub out_norm: LayerNorm,
}

impl SlotDistiller {
    pub fn new(dim: usize, mlp_hidden: usize, aggregate: Aggregate) -> Self {
        Self {
            dim,
            aggregate,
            key: Linear::new("idd.key", dim, dim, false),
            value: Linear::new("idd.value", dim, dim, false),
            query: Linear::new("idd.query", dim, dim, false),
            gru: Gru::new("idd.gru", dim, dim),
            norm: LayerNorm::new("idd.ln", dim),
            mlp: Mlp::new("idd.mlp", dim, mlp_hidden),
            out_norm: LayerNorm::new("idd.out_ln", dim),
        }
    }

    pub fn init(&self, store: &mut ParamStore, prototypes: usize, rng: &mut impl Rng) {
        for l in [&self.key, &self.value, &self.query] {
            l.init(store, rng);
        }
        self.gru.init(store, rng);
        self.norm.init(store);
        self.out_norm.init(store);
        self.mlp.init(store, rng);
        store.insert(SLOTS, randn(rng, prototypes, self.dim, 1.0 / (self.dim as f64).sqrt()));
    }

    /// Runs `iterations` shared-weight rounds starting from `slots`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        slots: Var,
        iterations: usize,
    ) -> Result<DistillTrace> {
        let (len, d) = tape.value(input).shape();
        if len == 0 {
            return Err(invalid!("instruction embedding has no rows"));
        }
        if d != self.dim || tape.value(slots).cols() != self.dim {
            return Err(shape_err!(
                "distiller expects width {}, got input {:?} and slots {:?}",
                self.dim,
                tape.value(input).shape(),
                tape.value(slots).shape()
            ));
        }
        let keys = self.key.forward(tape, store, input)?;
        let values = self.value.forward(tape, store, input)?;
        let scale = 1.0 / (self.dim as f64).sqrt();

        let mut s = slots;
        let mut attention = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let q = self.query.forward(tape, store, s)?;
            let logits = tape.matmul_bt(q, keys)?;
            let logits = tape.scale(logits, scale);
            let alpha = tape.softmax_cols(logits)?;
            attention.push(alpha);
            let weights = match self.aggregate {
                Aggregate::Sum => alpha,
                Aggregate::Mean => tape.normalize_rows(alpha, MEAN_EPS),
            };
            let updates = tape.matmul(weights, values)?;
            let gated = self.gru.step(tape, store, updates, s)?;
            let normed = self.norm.forward(tape, store, gated)?;
            let refined = self.mlp.forward(tape, store, normed)?;
            s = tape.add(gated, refined)?;
        }
        Ok(DistillTrace {
            output: self.out_norm.forward(tape, store, s)?,
            slots: s,
            attention,
        })
    }

    /// `K × d` duration prototypes for one embedded instruction.
    pub fn distill(&self, store: &ParamStore, input: &Tensor2D, bank: &SlotBank) -> Result<Tensor2D> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let s = tape.constant(bank.slots.clone());
        let trace = self.forward_tape(&mut tape, store, x, s, bank.iterations)?;
        Ok(tape.value(trace.output).clone())
    }
}

/// Free-function form: distills with the weights in `store` starting from
/// `bank`'s slots.
pub fn distill_duration(
    input: &Tensor2D,
    bank: &SlotBank,
    store: &ParamStore,
    distiller: &SlotDistiller,
) -> Result<Tensor2D> {
    distiller.distill(store, input, bank)
}

/// The whole duration path: distiller, cross-attention fusion, and the
/// recurrent log-duration predictor.
#[derive(Clone, Debug)]
pub struct DurationModel {
    pub config: IddConfig,
    pub distiller: SlotDistiller,
    pub fuse: CrossAttention,
    pub predictor: RecurrentPredictor,
}

/// Tape handles produced by [`DurationModel::forward_tape`].
#[derive(Clone, Debug)]
pub struct DurationTrace {
    pub prototypes: Var,
    pub fused: Var,
    pub log_durations: Var,
    pub attention: Vec<Var>,
}

impl DurationModel {
    pub fn new(config: IddConfig, d_gte: usize, d_m: usize, hidden: usize, mlp_hidden: usize) -> Self {
        Self {
            distiller: SlotDistiller::new(d_gte, mlp_hidden, config.aggregate),
            fuse: CrossAttention::new("idd", d_gte, d_m),
            predictor: RecurrentPredictor::new("idd.pred", 2 * d_m, hidden, &["head"]),
            config,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.distiller.init(store, self.config.prototypes, rng);
        self.fuse.init(store, rng);
        self.predictor.init(store, rng);
    }

    /// `instruction`: `L × d_gte`; `phonemes`: `L_pho × d_m`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        instruction: Var,
        phonemes: Var,
    ) -> Result<DurationTrace> {
        let slots = tape.param(store, SLOTS)?;
        let trace = self
            .distiller
            .forward_tape(tape, store, instruction, slots, self.config.iterations)?;
        let fused = self.fuse.forward(tape, store, phonemes, trace.output)?;
        let log_durations = predict_duration_tape(&self.predictor, tape, store, fused, phonemes)?;
        Ok(DurationTrace {
            prototypes: trace.output,
            fused,
            log_durations,
            attention: trace.attention,
        })
    }

    /// Per-phoneme log-durations (unscaled).
    pub fn predict_log(&self, store: &ParamStore, instruction: &Tensor2D, phonemes: &Tensor2D) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let i = tape.constant(instruction.clone());
        let p = tape.constant(phonemes.clone());
        let trace = self.forward_tape(&mut tape, store, i, p)?;
        Ok(tape.value(trace.log_durations).data().to_vec())
    }

    pub fn predict(
        &self,
        store: &ParamStore,
        instruction: &Tensor2D,
        phonemes: &Tensor2D,
        video_frames: usize,
    ) -> Result<DurationPrediction> {
        let log = self.predict_log(store, instruction, phonemes)?;
        let raw: Vec<f64> = log.iter().map(|v| v.exp()).collect();
        let mut pred = scale_durations(&raw, video_frames, self.config.scale_mode)?;
        pred.durations_log = log;
        Ok(pred)
    }
}

/// Fused features (`L_pho × d_m`) to the `L_pho × 1` log-duration column.
///
/// The recurrent predictor reads the fused features alongside the phoneme
/// features they were queried with.
pub fn predict_duration_tape(
    predictor: &RecurrentPredictor,
    tape: &mut Tape,
    store: &ParamStore,
    fused: Var,
    phonemes: Var,
) -> Result<Var> {
    let x = tape.concat_cols(phonemes, fused)?;
    let mut heads = predictor.forward(tape, store, x)?;
    Ok(heads.remove(0))
}

/// Runs `predictor` on an arbitrary `L × in` input and returns the first head.
pub fn predict_duration(predictor: &RecurrentPredictor, store: &ParamStore, input: &Tensor2D) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let out = predictor.forward(&mut tape, store, x)?;
    Ok(tape.value(out[0]).data().to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationPrediction {
    pub durations_log: Vec<f64>,
    pub durations_frames: Vec<f64>,
    pub video_frames: usize,
}

/// Rescales positive per-phoneme frame counts to sum to `video_frames`.
///
/// Integer mode rounds by largest remainder (lowest index wins ties) while
/// keeping every phoneme at one frame or more.
pub fn scale_durations(raw: &[f64], video_frames: usize, mode: ScaleMode) -> Result<DurationPrediction> {
    if raw.is_empty() {
        return Err(invalid!("no durations to scale"));
    }
    if raw.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(invalid!("durations must be finite and positive"));
    }
    if video_frames == 0 {
        return Err(invalid!("video_frames must be positive"));
    }
    let total: f64 = raw.iter().sum();
    let factor = video_frames as f64 / total;
    let scaled: Vec<f64> = raw.iter().map(|v| v * factor).collect();
    let durations_frames = match mode {
        ScaleMode::Continuous => scaled,
        ScaleMode::Integer => {
            if video_frames < raw.len() {
                return Err(Error::Infeasible(format!(
                    "{video_frames} frames cannot give {} phonemes one frame each",
                    raw.len()
                )));
            }
            largest_remainder(&scaled, video_frames)
                .into_iter()
                .map(|v| v as f64)
                .collect()
        }
    };
    Ok(DurationPrediction {
        durations_log: raw.iter().map(|v| v.ln()).collect(),
        durations_frames,
        video_frames,
    })
}

fn largest_remainder(scaled: &[f64], total: usize) -> Vec<usize> {
    let mut alloc: Vec<usize> = scaled.iter().map(|v| (v.floor() as usize).max(1)).collect();
    let assigned: usize = alloc.iter().sum();
    let rem = |alloc: &[usize], i: usize| scaled[i] - alloc[i] as f64;
    if assigned <= total {
        let mut order: Vec<usize> = (0..scaled.len()).collect();
        order.sort_by(|&a, &b| rem(&alloc, b).total_cmp(&rem(&alloc, a)).then(a.cmp(&b)));
        let extra = total - assigned;
        for &i in order.iter().cycle().take(extra) {
            alloc[i] += 1;
        }
    } else {
        // Raising tiny entries to one frame overshot; take frames back from
        // the most over-allocated phonemes that can spare one.
        for _ in 0..assigned - total {
            let i = (0..scaled.len())
                .filter(|&i| alloc[i] > 1)
                .min_by(|&a, &b| rem(&alloc, a).total_cmp(&rem(&alloc, b)).then(b.cmp(&a)))
                .expect("total >= len guarantees a donor");
            alloc[i] -= 1;
        }
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proportional_continuous() {
        let p = scale_durations(&[1.0, 1.0, 2.0], 8, ScaleMode::Continuous).unwrap();
        assert_eq!(p.durations_frames, vec![2.0, 2.0, 4.0]);
    }

    #[test]
    fn fixed_point() {
        let raw = [1.5, 2.25, 4.25];
        let p = scale_durations(&raw, 8, ScaleMode::Continuous).unwrap();
        assert_eq!(p.durations_frames, raw);
    }

    #[test]
    fn integer_tie_break() {
        let p = scale_durations(&[1.0, 1.0, 1.0], 4, ScaleMode::Integer).unwrap();
        assert_eq!(p.durations_frames, vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn integer_infeasible() {
        let err = scale_durations(&[1.0; 5], 4, ScaleMode::Integer).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn integer_min_one_with_tiny_entries() {
        let p = scale_durations(&[100.0, 0.01, 0.01, 0.01], 5, ScaleMode::Integer).unwrap();
        assert_eq!(p.durations_frames, vec![2.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(scale_durations(&[1.0, 0.0], 4, ScaleMode::Continuous).is_err());
        assert!(scale_durations(&[], 4, ScaleMode::Continuous).is_err());
    }

    proptest! {
        #[test]
        fn integer_sums_exactly(
            raw in prop::collection::vec(0.001f64..50.0, 1..40),
            slack in 0usize..400,
        ) {
            let frames = raw.len() + slack;
            let p = scale_durations(&raw, frames, ScaleMode::Integer).unwrap();
            let sum: f64 = p.durations_frames.iter().sum();
            prop_assert_eq!(sum as usize, frames);
            prop_assert!(p.durations_frames.iter().all(|&d| d >= 1.0 && d.fract() == 0.0));
        }

        #[test]
        fn continuous_sums(raw in prop::collection::vec(0.001f64..50.0, 1..40), frames in 1usize..2000) {
            let p = scale_durations(&raw, frames, ScaleMode::Continuous).unwrap();
            let sum: f64 = p.durations_frames.iter().sum();
            prop_assert!((sum - frames as f64).abs() < 1e-6);
        }
    }
}
