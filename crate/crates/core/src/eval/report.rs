//! Per-sample metrics and their aggregation.
//!
//! The JSONL report has one `{"record":"summary",...}` line followed by one
//! `{"record":"sample",...}` line per evaluated sample.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eval::metrics::{divergence, emo_sim, mean_abs_error, wer_text, DivergenceKind};
use crate::eval::Prediction;
use crate::iec::multi_hot;
use crate::training::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub dd: f64,
    pub wer: Option<f64>,
    pub emo_sim_pct: Option<f64>,
    pub pitch_mae: f64,
    pub energy_mae: f64,
    /// Predicted entity set equals the ground-truth set.
    pub entities_exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Summary {
    dd_kind: DivergenceKind,
    dd: f64,
    wer: Option<f64>,
    emo_sim_pct: Option<f64>,
    emo_sim_note: Option<String>,
    pitch_mae: f64,
    energy_mae: f64,
    entity_accuracy: f64,
    evaluated: usize,
    missing_predictions: Vec<String>,
    config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Line {
    Summary(Summary),
    Sample(SampleMetrics),
}

/// Aggregates are plain means over `per_sample` (EMO-SIM and WER over the
/// samples that have them).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dd_kind: DivergenceKind,
    pub dd: f64,
    pub wer: Option<f64>,
    pub emo_sim_pct: Option<f64>,
    /// Why EMO-SIM is absent or partial.
    pub emo_sim_note: Option<String>,
    pub pitch_mae: f64,
    pub energy_mae: f64,
    pub entity_accuracy: f64,
    pub per_sample: Vec<SampleMetrics>,
    pub missing_predictions: Vec<String>,
    pub config: serde_json::Value,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn sample_metrics(s: &Sample, p: &Prediction, kind: DivergenceKind) -> Result<SampleMetrics> {
    let ctx = |e: Error| invalid!("sample `{}`: {e}", s.sample_id);
    let emo = match &s.emotion_embedding {
        Some(truth) => Some(emo_sim(truth, &multi_hot(&p.entities)).map_err(ctx)?),
        None => None,
    };
    let wer = match &p.transcript {
        Some(t) => Some(wer_text(&s.script, t).map_err(ctx)?),
        None => None,
    };
    let mut a = p.entities.clone();
    let mut b = s.gt_entities.clone();
    a.sort();
    a.dedup();
    b.sort();
    b.dedup();
    Ok(SampleMetrics {
        sample_id: s.sample_id.clone(),
        dd: divergence(&p.durations, &s.gt_durations, kind).map_err(ctx)?,
        wer,
        emo_sim_pct: emo,
        pitch_mae: mean_abs_error(&p.pitch, &s.gt_pitch).map_err(ctx)?,
        energy_mae: mean_abs_error(&p.energy, &s.gt_energy).map_err(ctx)?,
        entities_exact: a == b,
    })
}

/// EMO-SIM compares the sample's reference embedding with the multi-hot
/// vector of the predicted entities.
pub fn build_report(
    samples: &[Sample],
    predictions: &[Prediction],
    kind: DivergenceKind,
    config: serde_json::Value,
) -> Result<MetricsReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(&p.sample_id, p).is_some() {
            return Err(invalid!("duplicate prediction for `{}`", p.sample_id));
        }
    }
    let mut per_sample = Vec::new();
    let mut missing = Vec::new();
    for s in samples {
        match by_id.get(s.sample_id.as_str()) {
            Some(p) => per_sample.push(sample_metrics(s, p, kind)?),
            None => missing.push(s.sample_id.clone()),
        }
    }
    if per_sample.is_empty() {
        return Err(invalid!("no sample has a prediction"));
    }
    let with_emo = per_sample.iter().filter(|m| m.emo_sim_pct.is_some()).count();
    let emo_sim_note = if with_emo == 0 {
        Some("no sample carries an emotion embedding".to_string())
    } else if with_emo < per_sample.len() {
        Some(format!(
            "{} sample(s) without an emotion embedding excluded",
            per_sample.len() - with_emo
        ))
    } else {
        None
    };
    Ok(MetricsReport {
        dd_kind: kind,
        dd: mean(per_sample.iter().map(|m| m.dd)).unwrap(),
        wer: mean(per_sample.iter().filter_map(|m| m.wer)),
        emo_sim_pct: mean(per_sample.iter().filter_map(|m| m.emo_sim_pct)),
        emo_sim_note,
        pitch_mae: mean(per_sample.iter().map(|m| m.pitch_mae)).unwrap(),
        energy_mae: mean(per_sample.iter().map(|m| m.energy_mae)).unwrap(),
        entity_accuracy: mean(per_sample.iter().map(|m| f64::from(u8::from(m.entities_exact)))).unwrap(),
        per_sample,
        missing_predictions: missing,
        config,
    })
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let summary = Line::Summary(Summary {
        dd_kind: report.dd_kind,
        dd: report.dd,
        wer: report.wer,
        emo_sim_pct: report.emo_sim_pct,
        emo_sim_note: report.emo_sim_note.clone(),
        pitch_mae: report.pitch_mae,
        energy_mae: report.energy_mae,
        entity_accuracy: report.entity_accuracy,
        evaluated: report.per_sample.len(),
        missing_predictions: report.missing_predictions.clone(),
        config: report.config.clone(),
    });
    let mut lines = vec![summary];
    lines.extend(report.per_sample.iter().cloned().map(Line::Sample));
    crate::training::write_jsonl(path, &lines)
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let lines: Vec<Line> = crate::training::read_jsonl(path)?;
    let mut it = lines.into_iter();
    let Some(Line::Summary(s)) = it.next() else {
        return Err(invalid!("{} does not start with a summary record", path.display()));
    };
    let per_sample = it
        .map(|l| match l {
            Line::Sample(m) => Ok(m),
            Line::Summary(_) => Err(invalid!("second summary record in {}", path.display())),
        })
        .collect::<Result<Vec<_>>>()?;
    if per_sample.len() != s.evaluated {
        return Err(invalid!(
            "summary lists {} samples, file has {}",
            s.evaluated,
            per_sample.len()
        ));
    }
    Ok(MetricsReport {
        dd_kind: s.dd_kind,
        dd: s.dd,
        wer: s.wer,
        emo_sim_pct: s.emo_sim_pct,
        emo_sim_note: s.emo_sim_note,
        pitch_mae: s.pitch_mae,
        energy_mae: s.energy_mae,
        entity_accuracy: s.entity_accuracy,
        per_sample,
        missing_predictions: s.missing_predictions,
        config: s.config,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Fixed-width table: one row per sample and a closing mean row.
pub fn render_table(report: &MetricsReport) -> String {
    let header = ["sample", "DD", "WER", "EMO-SIM", "pitch", "energy", "ent"];
    let mut rows: Vec<[String; 7]> = report
        .per_sample
        .iter()
        .map(|m| {
            [
                m.sample_id.clone(),
                format!("{:.4}", m.dd),
                opt(m.wer, 4),
                opt(m.emo_sim_pct, 2),
                format!("{:.4}", m.pitch_mae),
                format!("{:.4}", m.energy_mae),
                if m.entities_exact { "ok" } else { "x" }.to_string(),
            ]
        })
        .collect();
    rows.push([
        "mean".to_string(),
        format!("{:.4}", report.dd),
        opt(report.wer, 4),
        opt(report.emo_sim_pct, 2),
        format!("{:.4}", report.pitch_mae),
        format!("{:.4}", report.energy_mae),
        format!("{:.3}", report.entity_accuracy),
    ]);
    let mut width = header.map(str::len);
    for r in &rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let fmt = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = fmt(header.to_vec());
    out.push_str(&fmt(width
        .iter()
        .map(|w| "-".repeat(*w))
        .collect::<Vec<_>>()
        .iter()
        .map(String::as_str)
        .collect()));
    for r in &rows {
        out.push_str(&fmt(r.iter().map(String::as_str).collect()));
    }
    if let Some(note) = &report.emo_sim_note {
        out.push_str(&format!("note: {note}\n"));
    }
    if !report.missing_predictions.is_empty() {
        out.push_str(&format!(
            "missing predictions: {}\n",
            report.missing_predictions.join(", ")
        ));
    }
    out
}
