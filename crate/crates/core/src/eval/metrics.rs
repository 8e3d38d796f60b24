//! Pure metric functions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// Jensen–Shannon, natural log.
    #[default]
    Jsd,
    /// `½ (KL(p‖q) + KL(q‖p))`.
    SymKl,
}

impl std::str::FromStr for DivergenceKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsd" => Ok(Self::Jsd),
            "sym_kl" => Ok(Self::SymKl),
            other => Err(invalid!("unknown divergence `{other}`")),
        }
    }
}

fn normalized(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid!("durations must be finite and positive"));
    }
    let total: f64 = v.iter().sum();
    Ok(v.iter().map(|x| x / total).collect())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Divergence between the normalized duration distributions.
pub fn divergence(pred: &[f64], gt: &[f64], kind: DivergenceKind) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(invalid!("{} predicted vs {} reference durations", pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(invalid!("no durations"));
    }
    let p = normalized(pred)?;
    let q = normalized(gt)?;
    let d = match kind {
        DivergenceKind::Jsd => {
            let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
            0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)
        }
        DivergenceKind::SymKl => 0.5 * (kl(&p, &q) + kl(&q, &p)),
    };
    // Rounding can leave a tiny negative residue for equal inputs.
    Ok(d.max(0.0))
}

/// Jensen–Shannon duration divergence.
pub fn duration_divergence(pred: &[f64], gt: &[f64]) -> Result<f64> {
    divergence(pred, gt, DivergenceKind::Jsd)
}

/// Minimal edit distance between word sequences.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(invalid!("empty reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Lowercased words with ASCII punctuation removed (apostrophes kept).
pub fn normalize_transcript(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !(c.is_ascii_punctuation() && *c != '\''))
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// [`wer`] on raw transcripts after [`normalize_transcript`].
pub fn wer_text(reference: &str, hypothesis: &str) -> Result<f64> {
    wer(&normalize_transcript(reference), &normalize_transcript(hypothesis))
}

/// Cosine similarity in percent.
pub fn emo_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid!("embedding lengths {} and {} differ", a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(invalid!("emotion embedding has zero or non-finite norm"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((100.0 * dot / (na * nb)).clamp(-100.0, 100.0))
}

pub fn mean_abs_error(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(invalid!("lengths {} and {} cannot be compared", pred.len(), gt.len()));
    }
    Ok(pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Tries every alignment: each step matches/substitutes, deletes, or inserts.
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a, b) {
            ([], _) => b.len(),
            (_, []) => a.len(),
            ([x, ra @ ..], [y, rb @ ..]) => {
                let sub = usize::from(x != y) + brute(ra, rb);
                let del = 1 + brute(ra, b);
                let ins = 1 + brute(a, rb);
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&["a", "b", "c"], &["a", "b", "c"]).unwrap(), 0.0);
        assert!((wer(&["a", "b", "c"], &["a", "x", "c"]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer(&["a"], &["a", "b"]).unwrap(), 1.0);
        assert!(wer::<&str>(&[], &["a"]).is_err());
    }

    #[test]
    fn transcript_normalization() {
        assert_eq!(wer_text("Hello, World!", "hello world").unwrap(), 0.0);
        assert_eq!(normalize_transcript("It's  FINE."), ["it's", "fine"]);
    }

    #[test]
    fn jsd_hand_value() {
        let (p, q): ([f64; 2], [f64; 2]) = ([0.5, 0.5], [0.25, 0.75]);
        let m: [f64; 2] = [0.375, 0.625];
        let mut want = 0.0f64;
        for i in 0..2 {
            want += 0.5 * p[i] * (p[i] / m[i]).ln() + 0.5 * q[i] * (q[i] / m[i]).ln();
        }
        let got = duration_divergence(&[1.0, 1.0], &[1.0, 3.0]).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert_eq!(duration_divergence(&[3.0, 5.0], &[3.0, 5.0]).unwrap(), 0.0);
    }

    #[test]
    fn divergence_errors() {
        assert!(duration_divergence(&[1.0], &[1.0, 2.0]).is_err());
        assert!(duration_divergence(&[1.0, 0.0], &[1.0, 2.0]).is_err());
        assert!(duration_divergence(&[], &[]).is_err());
    }

    #[test]
    fn emo_sim_examples() {
        assert_eq!(emo_sim(&[0.3, -1.2, 2.0], &[0.3, -1.2, 2.0]).unwrap(), 100.0);
        assert_eq!(emo_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!((emo_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 100.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(emo_sim(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn wer_matches_enumeration(a in prop::collection::vec(0u8..3, 1..=6), b in prop::collection::vec(0u8..3, 0..=6)) {
            prop_assert_eq!(edit_distance(&a, &b), brute(&a, &b));
        }

        #[test]
        fn divergences_symmetric(v in prop::collection::vec((0.1f64..20.0, 0.1f64..20.0), 1..30)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            for kind in [DivergenceKind::Jsd, DivergenceKind::SymKl] {
                let x = divergence(&a, &b, kind).unwrap();
                let y = divergence(&b, &a, kind).unwrap();
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!(x >= 0.0);
            }
            prop_assert!(duration_divergence(&a, &b).unwrap() <= std::f64::consts::LN_2);
        }

        #[test]
        fn emo_sim_scale_invariant(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..10), c in 0.01f64..100.0) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && b.iter().any(|x| x.abs() > 1e-3));
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            prop_assert!((emo_sim(&a, &b).unwrap() - emo_sim(&scaled, &b).unwrap()).abs() < 1e-9);
        }
    }
}
