//! Finite-difference checks over the three trainable paths: the duration
//! path against `λ1 · L_dur`, the prosody path against `λ2 · L_emo`, and the
//! adapted emotion analyzer against its cross-entropy.

use serde::Serialize;

use crate::error::Result;
use crate::iec::{calibrate_analyzer, CalibratedAnalyzer, CalibrationConfig};
use crate::numerics::{grad_check, AdamConfig, GradCheckConfig, GradCheckReport, ParamStore, Tape};
use crate::synth::{gen_corpus, SynthConfig};
use crate::training::{DubbingModel, LossWeights, Sample};

#[derive(Clone, Debug, Serialize)]
pub struct PathCheck {
    pub path: String,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradSuiteReport {
    pub paths: Vec<PathCheck>,
    pub passed: bool,
}

impl GradSuiteReport {
    pub fn max_rel_error(&self) -> f64 {
        self.paths.iter().map(|p| p.report.max_rel_error).fold(0.0, f64::max)
    }
}

/// `store` with everything outside `prefix` frozen.
fn only(store: &ParamStore, prefix: &str) -> Result<ParamStore> {
    let mut s = store.clone();
    let names: Vec<String> = s.names().map(str::to_string).collect();
    for n in names {
        s.set_frozen(&n, !n.starts_with(prefix))?;
    }
    Ok(s)
}

fn model_path(
    model: &DubbingModel,
    store: &ParamStore,
    sample: &Sample,
    w: &LossWeights,
    prefix: &str,
    duration: bool,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let objective = |s: &ParamStore| {
        let mut tape = Tape::new();
        let l = model.losses(&mut tape, s, sample, w)?;
        let out = if duration {
            tape.scale(l.duration, w.lambda1)
        } else {
            tape.scale(l.emotion, w.lambda2)
        };
        Ok((tape.scalar(out), tape.backward(out)?))
    };
    grad_check(objective, &only(store, prefix)?, cfg)
}

/// Runs all three checks from a fresh seeded initialization. The analyzer is
/// first calibrated for a few steps so its adapters sit away from the
/// zero-initialized point.
pub fn run_grad_suite(
    model: &DubbingModel,
    analyzer_rank: usize,
    seed: u64,
    cfg: &GradCheckConfig,
) -> Result<GradSuiteReport> {
    let samples = gen_corpus(&SynthConfig {
        n_samples: 4,
        seed,
        id_prefix: "gc".into(),
        ..SynthConfig::default()
    })?;
    let sample = &samples[0];
    let store = model.init(seed);
    let w = LossWeights::default();

    let idd = model_path(model, &store, sample, &w, "idd.", true, cfg)?;
    let iec = model_path(model, &store, sample, &w, "iec.", false, cfg)?;

    let mut analyzer = CalibratedAnalyzer::new(model.config.d_gte, analyzer_rank, 0.5, seed);
    let pairs: Vec<_> = samples
        .iter()
        .map(|s| (s.emo_instruction.clone(), s.gt_entities.clone()))
        .collect();
    calibrate_analyzer(
        &pairs,
        &mut analyzer,
        &CalibrationConfig {
            adam: AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            epochs: 2,
            batch_size: 1,
            seed,
        },
    )?;
    let (text, truth) = (&sample.emo_instruction.text, &sample.gt_entities);
    let classifier = &analyzer.classifier;
    let objective = |s: &ParamStore| {
        let mut tape = Tape::new();
        let l = classifier.loss_tape(&mut tape, s, text, truth)?;
        Ok((tape.scalar(l), tape.backward(l)?))
    };
    let lora = grad_check(objective, &analyzer.store, cfg)?;

    let paths = vec![
        PathCheck {
            path: "duration".into(),
            report: idd,
        },
        PathCheck {
            path: "prosody".into(),
            report: iec,
        },
        PathCheck {
            path: "analyzer".into(),
            report: lora,
        },
    ];
    let passed = paths.iter().all(|p| p.report.passed);
    Ok(GradSuiteReport { paths, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idd::IddConfig;
    use crate::training::ModelConfig;

    #[test]
    fn suite_passes_on_small_model() {
        let cfg = ModelConfig {
            d_gte: 16,
            d_m: 8,
            hidden: 8,
            mlp_hidden: 16,
        };
        let idd = IddConfig {
            prototypes: 3,
            ..IddConfig::default()
        };
        let model = DubbingModel::new(cfg, idd).unwrap();
        let rep = run_grad_suite(&model, 2, 5, &GradCheckConfig::default()).unwrap();
        for p in &rep.paths {
            assert_eq!(p.report.checked.len(), 32, "{}", p.path);
            assert!(p.report.passed, "{} {:?}", p.path, p.report.worst());
        }
    }
}
