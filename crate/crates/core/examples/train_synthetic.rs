//! Trains both paths on a seeded synthetic corpus and compares held-out
//! metrics against the untrained initialization.
//!
//! cargo run --release --example train_synthetic -- [epochs]

use std::time::Instant;

use dubalign::eval::{build_report, DivergenceKind, Prediction};
use dubalign::idd::IddConfig;
use dubalign::iec::RuleAnalyzer;
use dubalign::synth::{gen_splits, SynthConfig};
use dubalign::training::{train, DubbingModel, ModelConfig, Sample, TrainConfig};

fn predict_all(model: &DubbingModel, store: &dubalign::numerics::ParamStore, set: &[Sample]) -> Vec<Prediction> {
    set.iter()
        .map(|s| model.predict_with_entities(store, s, s.gt_entities.clone()).unwrap())
        .collect()
}

fn main() -> dubalign::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |a| a.parse().expect("epochs"));
    let train_cfg = SynthConfig {
        n_samples: 200,
        seed: 1,
        ..SynthConfig::default()
    };
    let held_cfg = SynthConfig {
        n_samples: 50,
        seed: 2,
        id_prefix: "held".into(),
        ..SynthConfig::default()
    };
    let (train_set, held) = gen_splits(&train_cfg, &held_cfg)?;

    let model = DubbingModel::new(ModelConfig::default(), IddConfig::default())?;
    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let init = model.init(cfg.seed);
    let before = build_report(
        &held,
        &predict_all(&model, &init, &held),
        DivergenceKind::Jsd,
        serde_json::Value::Null,
    )?;

    let t = Instant::now();
    let out = train(&model, &train_set, &cfg)?;
    println!(
        "trained {} steps in {:.1}s ({:?})",
        out.trace.len(),
        t.elapsed().as_secs_f64(),
        out.status
    );
    let means = out.epoch_means();
    println!(
        "epoch mean loss: first {:.4}, last {:.4}",
        means[0],
        means[means.len() - 1]
    );

    let after = build_report(
        &held,
        &predict_all(&model, &out.store, &held),
        DivergenceKind::Jsd,
        serde_json::Value::Null,
    )?;
    println!("held-out DD      {:.5} -> {:.5}", before.dd, after.dd);
    println!("held-out |dp|    {:.4} -> {:.4}", before.pitch_mae, after.pitch_mae);
    println!("held-out |dn|    {:.4} -> {:.4}", before.energy_mae, after.energy_mae);

    let rule: Vec<Prediction> = held
        .iter()
        .map(|s| model.predict(&out.store, s, &RuleAnalyzer::default()).unwrap())
        .collect();
    let rep = build_report(&held, &rule, DivergenceKind::Jsd, serde_json::Value::Null)?;
    println!(
        "with rule analyzer: entity acc {:.3}, EMO-SIM {:.2}",
        rep.entity_accuracy,
        rep.emo_sim_pct.unwrap_or(f64::NAN)
    );
    Ok(())
}
