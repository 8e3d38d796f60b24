//! Seeded synthetic corpus with known ground truth.
//!
//! Each sample draws a script from the vocabulary, a rate level and one or
//! two emotion entities, then derives per-phoneme targets:
//!
//! * duration: `base(ph) · multiplier + N(0, (noise_sigma · base(ph))²)`,
//!   floored at 0.5 frames;
//! * pitch / energy: `base(ph) + mean entity offset + N(0, noise_sigma²)`.
//!
//! Per-phoneme bases come from [`phoneme_profile`]. Instructions are
//! rendered from a TOML template file (see `data/templates.toml`): every
//! template in `rate` must contain `{rate}`, `emotion_one`/`shifted_one`
//! must contain `{e1}`, and the two-entity lists `{e1}` and `{e2}`.
//! `[synonyms]` lists, per entity, words that may stand in for the label;
//! the first entry must be the label itself.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::iec::{multi_hot, EmotionEntity};
use crate::textfront::{G2p, InstructionKind, InstructionRecord, InstructionSource, WORD_BOUNDARY};
use crate::training::Sample;

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.toml");

/// Redraws allowed per sample before giving up on finding an unused script.
const MAX_REDRAWS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLevel {
    pub label: String,
    pub multiplier: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmotionProfile {
    pub entity: EmotionEntity,
    pub pitch_offset: f64,
    pub energy_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub rate: Vec<String>,
    pub emotion_one: Vec<String>,
    pub emotion_two: Vec<String>,
    pub shifted_one: Vec<String>,
    pub shifted_two: Vec<String>,
    pub synonyms: BTreeMap<EmotionEntity, Vec<String>>,
}

impl Templates {
    pub fn parse(text: &str) -> Result<Self> {
        let t: Templates = toml::from_str(text).map_err(|e| Error::Config(format!("templates: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let need = |list: &[String], name: &str, keys: &[&str]| -> Result<()> {
            if list.is_empty() {
                return Err(Error::Config(format!("template list `{name}` is empty")));
            }
            for t in list {
                for k in keys {
                    if !t.contains(k) {
                        return Err(Error::Config(format!("template `{t}` in `{name}` lacks {k}")));
                    }
                }
            }
            Ok(())
        };
        need(&self.rate, "rate", &["{rate}"])?;
        need(&self.emotion_one, "emotion_one", &["{e1}"])?;
        need(&self.shifted_one, "shifted_one", &["{e1}"])?;
        need(&self.emotion_two, "emotion_two", &["{e1}", "{e2}"])?;
        need(&self.shifted_two, "shifted_two", &["{e1}", "{e2}"])?;
        for e in EmotionEntity::ALL {
            match self.synonyms.get(&e) {
                Some(words) if words.len() >= 2 && words[0] == e.as_str() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "synonyms for `{e}` must start with the label and have an alternative"
                    )))
                }
            }
        }
        Ok(())
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Script words; empty means every word of the shipped lexicon.
    pub vocabulary: Vec<String>,
    pub min_words: usize,
    pub max_words: usize,
    pub rate_levels: Vec<RateLevel>,
    pub emotion_profiles: Vec<EmotionProfile>,
    pub noise_sigma: f64,
    /// Probability of replacing an entity label by one of its synonyms.
    pub synonym_rate: f64,
    /// Probability of drawing the emotion template from the `shifted_*`
    /// families. With both rates at 1 no bare label or seen template occurs.
    pub shifted_rate: f64,
    pub id_prefix: String,
    pub template_file: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let rate = |label: &str, multiplier| RateLevel {
            label: label.into(),
            multiplier,
        };
        let emo = |entity, pitch_offset, energy_offset| EmotionProfile {
            entity,
            pitch_offset,
            energy_offset,
        };
        use EmotionEntity::*;
        Self {
            n_samples: 200,
            seed: 0,
            vocabulary: Vec::new(),
            min_words: 3,
            max_words: 6,
            rate_levels: vec![
                rate("very slow", 1.6),
                rate("slow", 1.3),
                rate("moderate", 1.0),
                rate("fast", 0.8),
                rate("very fast", 0.6),
            ],
            emotion_profiles: vec![
                emo(Happy, 1.5, 0.5),
                emo(Angry, 1.0, 1.0),
                emo(Disgust, -0.5, 0.3),
                emo(Fear, 1.2, -0.3),
                emo(Neutral, 0.0, 0.0),
                emo(Sad, -1.2, -0.7),
                emo(Surprise, 2.0, 0.6),
            ],
            noise_sigma: 0.05,
            synonym_rate: 0.0,
            shifted_rate: 0.0,
            id_prefix: "syn".into(),
            template_file: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_samples == 0 {
            return bad("synth.n_samples must be at least 1".into());
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad(format!("word range {}..={} is empty", self.min_words, self.max_words));
        }
        if self.rate_levels.is_empty() {
            return bad("no rate levels".into());
        }
        let mut labels = HashSet::new();
        for r in &self.rate_levels {
            if !(r.multiplier > 0.0 && r.multiplier.is_finite()) {
                return bad(format!("rate `{}` has multiplier {}", r.label, r.multiplier));
            }
            if r.label.trim().is_empty() || !labels.insert(r.label.as_str()) {
                return bad(format!("rate label `{}` is empty or repeated", r.label));
            }
        }
        for e in EmotionEntity::ALL {
            if self.emotion_profiles.iter().filter(|p| p.entity == e).count() != 1 {
                return bad(format!("need exactly one emotion profile for `{e}`"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} is invalid", self.noise_sigma));
        }
        for (name, r) in [("synonym_rate", self.synonym_rate), ("shifted_rate", self.shifted_rate)] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<Templates> {
        match &self.template_file {
            Some(p) => Templates::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => Ok(Templates::default()),
        }
    }

    fn profile(&self, e: EmotionEntity) -> &EmotionProfile {
        self.emotion_profiles.iter().find(|p| p.entity == e).expect("validated")
    }
}

const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];

/// `(duration frames, pitch, energy)` before rate, emotion and noise.
///
/// Vowels last 8–12 frames, consonants 4–7, word boundaries 2.
pub fn phoneme_profile(symbol: &str) -> (f64, f64, f64) {
    let h = symbol.bytes().fold(0usize, |acc, b| acc * 31 + b as usize);
    if symbol == WORD_BOUNDARY {
        (2.0, 0.0, 0.0)
    } else if VOWELS.contains(&symbol) {
        (
            8.0 + (h % 5) as f64,
            0.4 + 0.15 * (h % 4) as f64,
            1.0 + 0.1 * (h % 3) as f64,
        )
    } else {
        (
            4.0 + (h % 4) as f64,
            -0.2 + 0.1 * (h % 3) as f64,
            0.3 + 0.1 * (h % 4) as f64,
        )
    }
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    templates: Templates,
    vocabulary: Vec<String>,
    g2p: G2p,
}

impl Generator<'_> {
    fn word_for(&self, e: EmotionEntity, rng: &mut ChaCha8Rng) -> String {
        let words = &self.templates.synonyms[&e];
        if rng.random_bool(self.cfg.synonym_rate) {
            words[1..].choose(rng).expect("validated").clone()
        } else {
            words[0].clone()
        }
    }

    fn entities(&self, rng: &mut ChaCha8Rng) -> Vec<EmotionEntity> {
        let first = *EmotionEntity::ALL.choose(rng).unwrap();
        if first == EmotionEntity::Neutral || rng.random_bool(0.6) {
            return vec![first];
        }
        let others: Vec<EmotionEntity> = EmotionEntity::ALL
            .into_iter()
            .filter(|e| *e != first && *e != EmotionEntity::Neutral)
            .collect();
        vec![first, *others.choose(rng).unwrap()]
    }

    fn sample(&self, index: usize, exclude: &HashSet<String>) -> Result<Sample> {
        let cfg = self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64);
        let mut script = None;
        for _ in 0..MAX_REDRAWS {
            let n = rng.random_range(cfg.min_words..=cfg.max_words);
            let words: Vec<&str> = (0..n)
                .map(|_| self.vocabulary.choose(&mut rng).unwrap().as_str())
                .collect();
            let s = words.join(" ");
            if !exclude.contains(&s) {
                script = Some(s);
                break;
            }
        }
        let script = script.ok_or_else(|| invalid!("could not draw an unused script for sample {index}"))?;
        let phonemes = self.g2p.convert(&script)?;

        let rate = cfg.rate_levels.choose(&mut rng).unwrap();
        let entities = self.entities(&mut rng);
        let offsets = entities.iter().fold((0.0, 0.0), |acc, e| {
            let p = cfg.profile(*e);
            (acc.0 + p.pitch_offset, acc.1 + p.energy_offset)
        });
        let k = entities.len() as f64;
        let (pitch_off, energy_off) = (offsets.0 / k, offsets.1 / k);

        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut gt_durations = Vec::with_capacity(phonemes.len());
        let mut gt_pitch = Vec::with_capacity(phonemes.len());
        let mut gt_energy = Vec::with_capacity(phonemes.len());
        for ph in phonemes.iter() {
            let (d, p, e) = phoneme_profile(ph);
            let noise: f64 = unit.sample(&mut rng);
            gt_durations.push((d * rate.multiplier + cfg.noise_sigma * d * noise).max(0.5));
            gt_pitch.push(p + pitch_off + cfg.noise_sigma * unit.sample(&mut rng));
            gt_energy.push(e + energy_off + cfg.noise_sigma * unit.sample(&mut rng));
        }
        let video_frames = (gt_durations.iter().sum::<f64>().round() as usize).max(1);

        let rate_text = self
            .templates
            .rate
            .choose(&mut rng)
            .unwrap()
            .replace("{rate}", &rate.label);
        let (one, two) = if rng.random_bool(cfg.shifted_rate) {
            (&self.templates.shifted_one, &self.templates.shifted_two)
        } else {
            (&self.templates.emotion_one, &self.templates.emotion_two)
        };
        let emo_text = match entities.as_slice() {
            [a] => one
                .choose(&mut rng)
                .unwrap()
                .replace("{e1}", &self.word_for(*a, &mut rng)),
            [a, b] => {
                let t = two.choose(&mut rng).unwrap();
                let wa = self.word_for(*a, &mut rng);
                let wb = self.word_for(*b, &mut rng);
                t.replace("{e1}", &wa).replace("{e2}", &wb)
            }
            _ => unreachable!("one or two entities"),
        };
        let sample_id = format!("{}{index:04}", cfg.id_prefix);
        let mut emb = multi_hot(&entities);
        for v in &mut emb {
            *v += cfg.noise_sigma * unit.sample(&mut rng);
        }
        Ok(Sample {
            dur_instruction: InstructionRecord::new(
                &sample_id,
                InstructionKind::Duration,
                rate_text,
                InstructionSource::Synthetic,
            )?,
            emo_instruction: InstructionRecord::new(
                &sample_id,
                InstructionKind::Emotion,
                emo_text,
                InstructionSource::Synthetic,
            )?,
            sample_id,
            script,
            phonemes,
            gt_durations,
            gt_pitch,
            gt_energy,
            gt_entities: entities,
            video_frames,
            speaker_id: format!("spk{}", rng.random_range(0..4)),
            emotion_embedding: Some(emb),
        })
    }
}

/// Generates `cfg.n_samples` samples. Sample `i` depends only on
/// `(cfg, i)`.
pub fn gen_corpus(cfg: &SynthConfig) -> Result<Vec<Sample>> {
    gen_corpus_excluding(cfg, &HashSet::new())
}

/// As [`gen_corpus`], redrawing any script found in `exclude`.
pub fn gen_corpus_excluding(cfg: &SynthConfig, exclude: &HashSet<String>) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let g2p = G2p::default();
    let vocabulary = if cfg.vocabulary.is_empty() {
        g2p.lexicon().words().map(str::to_string).collect()
    } else {
        cfg.vocabulary.clone()
    };
    if vocabulary
        .iter()
        .any(|w| crate::textfront::g2p::normalize_words(w).len() != 1)
    {
        return Err(Error::Config("vocabulary entries must be single words".into()));
    }
    let generator = Generator {
        cfg,
        templates: cfg.templates()?,
        vocabulary,
        g2p,
    };
    (0..cfg.n_samples).map(|i| generator.sample(i, exclude)).collect()
}

/// Train and held-out corpora from different seeds, with no held-out script
/// repeating a training script.
pub fn gen_splits(train: &SynthConfig, heldout: &SynthConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if train.seed == heldout.seed && train.id_prefix == heldout.id_prefix {
        return Err(invalid!("train and held-out splits need different seeds or prefixes"));
    }
    let a = gen_corpus(train)?;
    let seen: HashSet<String> = a.iter().map(|s| s.script.clone()).collect();
    let b = gen_corpus_excluding(heldout, &seen)?;
    Ok((a, b))
}

/// Rate multiplier for a label in `cfg`.
pub fn rate_multiplier(cfg: &SynthConfig, label: &str) -> Option<f64> {
    cfg.rate_levels.iter().find(|r| r.label == label).map(|r| r.multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfront::PhonemeInventory;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a = gen_corpus(&small(50, 7)).unwrap();
        assert_eq!(a.len(), 50);
        assert_eq!(a, gen_corpus(&small(50, 7)).unwrap());
        assert_ne!(a, gen_corpus(&small(50, 8)).unwrap());
    }

    #[test]
    fn prefix_is_stable() {
        // Sample i does not depend on how many samples follow it.
        let a = gen_corpus(&small(10, 3)).unwrap();
        let b = gen_corpus(&small(4, 3)).unwrap();
        assert_eq!(&a[..4], &b[..]);
    }

    #[test]
    fn samples_are_valid_and_informative() {
        let inv = PhonemeInventory::default();
        let cfg = small(100, 1);
        for s in gen_corpus(&cfg).unwrap() {
            s.validate(&inv).unwrap();
            let rate = cfg
                .rate_levels
                .iter()
                .filter(|r| s.dur_instruction.text.contains(&r.label))
                .count();
            assert!(rate >= 1);
            for e in &s.gt_entities {
                assert!(
                    s.emo_instruction.text.contains(e.as_str()),
                    "{}",
                    s.emo_instruction.text
                );
            }
            let total: f64 = s.gt_durations.iter().sum();
            assert_eq!(s.video_frames, total.round() as usize);
        }
    }

    #[test]
    fn very_fast_multiplier() {
        let cfg = SynthConfig {
            n_samples: 100,
            rate_levels: vec![RateLevel {
                label: "very fast".into(),
                multiplier: 0.6,
            }],
            ..SynthConfig::default()
        };
        let (mut ratio, mut n) = (0.0, 0.0);
        for s in gen_corpus(&cfg).unwrap() {
            for (ph, d) in s.phonemes.iter().zip(&s.gt_durations) {
                ratio += d / phoneme_profile(ph).0;
                n += 1.0;
            }
        }
        let mean = ratio / n;
        // noise on the ratio has std 0.05, so thousands of phonemes pin the mean tightly
        assert!((mean - 0.6).abs() < 0.01, "{mean}");
    }

    #[test]
    fn splits_disjoint() {
        let (a, b) = gen_splits(
            &small(200, 1),
            &SynthConfig {
                id_prefix: "held".into(),
                ..small(50, 2)
            },
        )
        .unwrap();
        let seen: HashSet<_> = a.iter().map(|s| &s.script).collect();
        assert!(b.iter().all(|s| !seen.contains(&s.script)));
    }

    #[test]
    fn paraphrase_avoids_labels() {
        let cfg = SynthConfig {
            synonym_rate: 1.0,
            shifted_rate: 1.0,
            ..small(60, 4)
        };
        for s in gen_corpus(&cfg).unwrap() {
            let t = crate::textfront::tokenize(&s.emo_instruction.text);
            for e in &s.gt_entities {
                assert!(!t.iter().any(|w| w == e.as_str()), "{}", s.emo_instruction.text);
            }
        }
    }

    #[test]
    fn invalid_config() {
        assert!(gen_corpus(&small(0, 1)).is_err());
        let mut c = small(5, 1);
        c.rate_levels[0].multiplier = 0.0;
        assert!(gen_corpus(&c).is_err());
        let mut c = small(5, 1);
        c.rate_levels[1].label = "very slow".into();
        assert!(gen_corpus(&c).is_err());
    }
}
