//! Command-line entry point shared by the `dubalign` binary.
//!
//! Every subcommand writes into `--out` (default `.`) and leaves a
//! `manifest.json` there with the effective configuration, the crate
//! version and the SHA-256 of every input file.

pub mod config;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::eval::{build_report, render_table, write_report, Prediction};
use crate::idd::ScaleMode;
use crate::iec::{calibrate_analyzer, AnalyzerKind, CalibratedAnalyzer, EntityAnalyzer, RuleAnalyzer};
use crate::numerics::GradCheckConfig;
use crate::provider::{load_fixtures, FetchJob, RemoteProvider, ResponseCache};
use crate::synth::{gen_corpus, gen_splits, SynthConfig};
use crate::textfront::{InstructionKind, InstructionRecord};
use crate::training::{
    load_corpus, read_jsonl, restore_into, run_grad_suite, save_checkpoint, train, write_jsonl, DubbingModel, Sample,
    TrainStatus,
};

pub use config::{load_config, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "dubalign",
    version,
    about = "Instruction-conditioned duration and prosody prediction for dubbing",
    after_help = "Any config key can be overridden with --section.key=value, e.g. --idd.prototypes=5."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation, training and calibration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        /// Also write a held-out split of this size with disjoint scripts.
        #[arg(long)]
        heldout: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the duration and prosody model.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Continue from these parameters instead of a fresh init.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the emotion analyzer's low-rank adapters.
    Calibrate {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict durations, pitch, energy and entities.
    Predict {
        #[command(flatten)]
        run: PredictArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against a corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Predictions file; when absent, predictions are made from --checkpoint.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        analyzer: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        scale_mode: Option<ScaleMode>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every trainable path.
    Gradcheck {
        #[arg(long, default_value_t = 32)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct PredictArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Calibrated analyzer checkpoint (used when iec.analyzer = calibrated).
    #[arg(long)]
    analyzer: Option<PathBuf>,
    /// Instruction fixtures replacing the corpus instructions.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Fetch instructions from this service instead.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    scale_mode: Option<ScaleMode>,
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: serde_json::Value,
    inputs: Vec<InputHash>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputHash {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg.to_json(),
        inputs,
    };
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

type Overrides = Vec<(String, String)>;

/// Splits `--section.key=value` overrides from the arguments clap sees.
fn split_overrides(argv: &[String]) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for (i, a) in argv.iter().enumerate() {
        if i > 0 {
            if let Some(body) = a.strip_prefix("--") {
                let key = body.split('=').next().unwrap_or("");
                if key.contains('.') {
                    let (k, v) = body
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("override `{a}` needs the form --key=value")))?;
                    overrides.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
        }
        rest.push(a.clone());
    }
    Ok((rest, overrides))
}

fn resolve(common: &Common, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = load_config(common.config.as_deref(), overrides)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn config_inputs(common: &Common) -> Vec<&Path> {
    common.config.as_deref().into_iter().collect()
}

/// Runs one command line; returns the process exit code.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let (args, overrides) = match split_overrides(&argv) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn run(command: Command, overrides: &[(String, String)]) -> Result<i32> {
    match command {
        Command::GenData { n, heldout, common } => {
            let cfg = resolve(&common, overrides)?;
            gen_data(&cfg, n, heldout, &common)
        }
        Command::Train {
            corpus,
            checkpoint,
            common,
        } => {
            let cfg = resolve(&common, overrides)?;
            train_cmd(&cfg, &corpus, checkpoint.as_deref(), &common)
        }
        Command::Calibrate { corpus, common } => {
            let cfg = resolve(&common, overrides)?;
            calibrate_cmd(&cfg, &corpus, &common)
        }
        Command::Predict { run, common } => {
            let mut cfg = resolve(&common, overrides)?;
            if let Some(m) = run.scale_mode {
                cfg.idd.scale_mode = m;
            }
            if let Some(url) = &run.endpoint {
                cfg.provider.url = url.clone();
            }
            let samples = load_corpus(&run.corpus)?;
            let preds = predict_all(&cfg, &samples, &run, &common.out)?;
            ensure_dir(&common.out)?;
            write_jsonl(&common.out.join("predictions.jsonl"), &preds)?;
            let mut inputs = config_inputs(&common);
            inputs.extend([run.corpus.as_path(), run.checkpoint.as_path()]);
            inputs.extend(run.analyzer.as_deref());
            inputs.extend(run.fixtures.as_deref());
            write_manifest(&common.out, "predict", &cfg, &inputs)?;
            println!("wrote {} predictions", preds.len());
            Ok(EXIT_OK)
        }
        Command::Eval {
            corpus,
            predictions,
            checkpoint,
            analyzer,
            fixtures,
            scale_mode,
            common,
        } => {
            let mut cfg = resolve(&common, overrides)?;
            if let Some(m) = scale_mode {
                cfg.idd.scale_mode = m;
            }
            let samples = load_corpus(&corpus)?;
            let mut inputs = config_inputs(&common);
            inputs.push(corpus.as_path());
            let preds: Vec<Prediction> = match (&predictions, &checkpoint) {
                (Some(p), _) => {
                    inputs.push(p);
                    read_jsonl(p)?
                }
                (None, Some(ck)) => {
                    inputs.push(ck);
                    inputs.extend(analyzer.as_deref());
                    inputs.extend(fixtures.as_deref());
                    let args = PredictArgs {
                        corpus: corpus.clone(),
                        checkpoint: ck.clone(),
                        analyzer: analyzer.clone(),
                        fixtures: fixtures.clone(),
                        endpoint: None,
                        scale_mode,
                    };
                    predict_all(&cfg, &samples, &args, &common.out)?
                }
                (None, None) => return Err(invalid!("eval needs --predictions or --checkpoint")),
            };
            let report = build_report(&samples, &preds, cfg.eval.dd, cfg.to_json())?;
            ensure_dir(&common.out)?;
            write_report(&report, &common.out.join("report.jsonl"))?;
            write_manifest(&common.out, "eval", &cfg, &inputs)?;
            print!("{}", render_table(&report));
            Ok(EXIT_OK)
        }
        Command::Gradcheck { samples, common } => {
            let cfg = resolve(&common, overrides)?;
            let model = DubbingModel::new(cfg.model.clone(), cfg.idd.clone())?;
            let gc = GradCheckConfig {
                samples,
                ..GradCheckConfig::default()
            };
            let report = run_grad_suite(&model, cfg.iec.lora_rank, cfg.training.seed, &gc)?;
            for p in &report.paths {
                println!(
                    "{:<9} {} coordinates, max relative error {:.3e} ({})",
                    p.path,
                    p.report.checked.len(),
                    p.report.max_rel_error,
                    if p.report.passed { "ok" } else { "FAILED" }
                );
            }
            ensure_dir(&common.out)?;
            let path = common.out.join("gradcheck.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
            write_manifest(&common.out, "gradcheck", &cfg, &config_inputs(&common))?;
            Ok(if report.passed { EXIT_OK } else { EXIT_ERROR })
        }
    }
}

fn gen_data(cfg: &RunConfig, n: Option<usize>, heldout: Option<usize>, common: &Common) -> Result<i32> {
    let train_cfg = SynthConfig {
        n_samples: n.unwrap_or(cfg.synth.n_samples),
        ..cfg.synth.clone()
    };
    ensure_dir(&common.out)?;
    match heldout {
        Some(m) => {
            let held_cfg = SynthConfig {
                n_samples: m,
                seed: train_cfg.seed.wrapping_add(1),
                id_prefix: format!("{}-held", train_cfg.id_prefix),
                ..train_cfg.clone()
            };
            let (a, b) = gen_splits(&train_cfg, &held_cfg)?;
            write_jsonl(&common.out.join("corpus.jsonl"), &a)?;
            write_jsonl(&common.out.join("heldout.jsonl"), &b)?;
            println!("wrote {} + {} samples", a.len(), b.len());
        }
        None => {
            let a = gen_corpus(&train_cfg)?;
            write_jsonl(&common.out.join("corpus.jsonl"), &a)?;
            println!("wrote {} samples", a.len());
        }
    }
    let mut echo = cfg.clone();
    echo.synth.n_samples = train_cfg.n_samples;
    write_manifest(&common.out, "gen-data", &echo, &config_inputs(common))?;
    Ok(EXIT_OK)
}

fn train_cmd(cfg: &RunConfig, corpus: &Path, checkpoint: Option<&Path>, common: &Common) -> Result<i32> {
    let samples = load_corpus(corpus)?;
    let model = DubbingModel::new(cfg.model.clone(), cfg.idd.clone())?;
    let outcome = match checkpoint {
        Some(ck) => {
            let mut store = model.init(cfg.training.seed);
            restore_into(&mut store, ck)?;
            crate::training::train_from(&model, store, &samples, &cfg.training)?
        }
        None => train(&model, &samples, &cfg.training)?,
    };
    ensure_dir(&common.out)?;
    save_checkpoint(
        &outcome.store,
        &common.out.join("model.ckpt"),
        &cfg.to_json(),
        cfg.checkpoint.encoding,
    )?;
    write_jsonl(&common.out.join("loss_trace.jsonl"), &outcome.trace)?;
    let mut inputs = config_inputs(common);
    inputs.push(corpus);
    inputs.extend(checkpoint);
    write_manifest(&common.out, "train", cfg, &inputs)?;
    let means = outcome.epoch_means();
    if let (Some(first), Some(last)) = (means.first(), means.last()) {
        println!("epochs {}: mean loss {first:.4} -> {last:.4}", means.len());
    }
    match outcome.status {
        TrainStatus::Completed => Ok(EXIT_OK),
        TrainStatus::Aborted {
            step,
            sample_id,
            reason,
        } => {
            eprintln!("error: training aborted at step {step} on `{sample_id}`: {reason}; checkpoint holds the last good state");
            Ok(EXIT_ERROR)
        }
    }
}

fn new_analyzer(cfg: &RunConfig) -> CalibratedAnalyzer {
    CalibratedAnalyzer::new(
        cfg.model.d_gte,
        cfg.iec.lora_rank,
        cfg.iec.threshold,
        cfg.calibration.seed,
    )
}

fn calibrate_cmd(cfg: &RunConfig, corpus: &Path, common: &Common) -> Result<i32> {
    let samples = load_corpus(corpus)?;
    let pairs: Vec<_> = samples
        .iter()
        .map(|s| (s.emo_instruction.clone(), s.gt_entities.clone()))
        .collect();
    let mut analyzer = new_analyzer(cfg);
    let report = calibrate_analyzer(&pairs, &mut analyzer, &cfg.calibration)?;
    ensure_dir(&common.out)?;
    save_checkpoint(
        &analyzer.store,
        &common.out.join("analyzer.ckpt"),
        &cfg.to_json(),
        cfg.checkpoint.encoding,
    )?;
    let path = common.out.join("calibration.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
    let mut inputs = config_inputs(common);
    inputs.push(corpus);
    write_manifest(&common.out, "calibrate", cfg, &inputs)?;
    if let (Some(a), Some(b)) = (report.epoch_losses.first(), report.epoch_losses.last()) {
        println!("calibration loss {a:.4} -> {b:.4} over {} steps", report.steps);
    }
    Ok(EXIT_OK)
}

/// Replaces sample instructions with fixture or remote ones where given.
fn swap_instructions(samples: &mut [Sample], records: Vec<InstructionRecord>) {
    let mut by_key: HashMap<(String, InstructionKind), InstructionRecord> = records
        .into_iter()
        .map(|r| ((r.sample_id.clone(), r.kind), r))
        .collect();
    for s in samples {
        if let Some(r) = by_key.remove(&(s.sample_id.clone(), InstructionKind::Duration)) {
            s.dur_instruction = r;
        }
        if let Some(r) = by_key.remove(&(s.sample_id.clone(), InstructionKind::Emotion)) {
            s.emo_instruction = r;
        }
    }
}

fn predict_all(cfg: &RunConfig, samples: &[Sample], args: &PredictArgs, out: &Path) -> Result<Vec<Prediction>> {
    let mut samples = samples.to_vec();
    if let Some(f) = &args.fixtures {
        swap_instructions(&mut samples, load_fixtures(f)?);
    }
    if args.endpoint.is_some() {
        let cache_dir = cfg
            .provider
            .resolved_cache_dir()
            .unwrap_or_else(|| out.join("instruction_cache"));
        let provider = RemoteProvider::new(
            cfg.provider.endpoint()?,
            cfg.provider.prompts.clone(),
            Some(ResponseCache::new(cache_dir)),
        )?;
        let jobs: Vec<FetchJob> = samples
            .iter()
            .flat_map(|s| {
                [InstructionKind::Duration, InstructionKind::Emotion].map(|kind| FetchJob {
                    sample_id: s.sample_id.clone(),
                    kind,
                    script: s.script.clone(),
                    video_ref: s.sample_id.clone(),
                })
            })
            .collect();
        let fetched = provider
            .fetch_all(&jobs)
            .into_iter()
            .map(|r| r.map(|f| f.record))
            .collect::<Result<Vec<_>>>()?;
        swap_instructions(&mut samples, fetched);
    }
    let mut idd = cfg.idd.clone();
    if let Some(m) = args.scale_mode {
        idd.scale_mode = m;
    }
    let model = DubbingModel::new(cfg.model.clone(), idd)?;
    let mut store = model.init(cfg.training.seed);
    restore_into(&mut store, &args.checkpoint)?;
    let analyzer: Box<dyn EntityAnalyzer> = match cfg.iec.analyzer {
        AnalyzerKind::Rule => Box::new(RuleAnalyzer::default()),
        AnalyzerKind::Calibrated => {
            let path = args
                .analyzer
                .as_ref()
                .ok_or_else(|| invalid!("iec.analyzer = calibrated needs --analyzer <checkpoint>"))?;
            let mut a = new_analyzer(cfg);
            restore_into(&mut a.store, path)?;
            Box::new(a)
        }
    };
    samples
        .iter()
        .map(|s| model.predict(&store, s, analyzer.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) = split_overrides(&argv("dubalign train --corpus c.jsonl --idd.prototypes=5 --out x")).unwrap();
        assert_eq!(rest, argv("dubalign train --corpus c.jsonl --out x"));
        assert_eq!(ov, vec![("idd.prototypes".to_string(), "5".to_string())]);
        assert!(split_overrides(&argv("dubalign train --idd.prototypes 5")).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(argv("dubalign frobnicate")), EXIT_USAGE);
        assert_eq!(dispatch(argv("dubalign")), EXIT_USAGE);
        assert_eq!(dispatch(argv("dubalign train")), EXIT_USAGE);
    }

    #[test]
    fn validation_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().display().to_string();
        assert_eq!(
            dispatch(argv(&format!("dubalign gen-data --n 3 --out {out} --idd.prototypes=0"))),
            EXIT_ERROR
        );
        assert_eq!(
            dispatch(argv(&format!("dubalign gen-data --n 3 --out {out} --bogus.key=1"))),
            EXIT_ERROR
        );
        assert_eq!(
            dispatch(argv(&format!(
                "dubalign train --corpus {out}/missing.jsonl --out {out}"
            ))),
            EXIT_ERROR
        );
    }
}
