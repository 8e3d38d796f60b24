//! The closed emotion vocabulary and the keyword-driven rule analyzer.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::textfront::{tokenize, InstructionKind, InstructionRecord};

const DEFAULT_KEYWORDS: &str = include_str!("../../data/emotion_keywords.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionEntity {
    Happy,
    Angry,
    Disgust,
    Fear,
    Neutral,
    Sad,
    Surprise,
}

impl EmotionEntity {
    pub const ALL: [EmotionEntity; 7] = [
        EmotionEntity::Happy,
        EmotionEntity::Angry,
        EmotionEntity::Disgust,
        EmotionEntity::Fear,
        EmotionEntity::Neutral,
        EmotionEntity::Sad,
        EmotionEntity::Surprise,
    ];

    pub const COUNT: usize = 7;

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionEntity::Happy => "happy",
            EmotionEntity::Angry => "angry",
            EmotionEntity::Disgust => "disgust",
            EmotionEntity::Fear => "fear",
            EmotionEntity::Neutral => "neutral",
            EmotionEntity::Sad => "sad",
            EmotionEntity::Surprise => "surprise",
        }
    }

    /// Position in [`EmotionEntity::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for EmotionEntity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EmotionEntity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EmotionEntity::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| invalid!("`{s}` is not an emotion entity"))
    }
}

/// Multi-hot `1 × 7` target row.
pub fn multi_hot(entities: &[EmotionEntity]) -> Vec<f64> {
    let mut v = vec![0.0; EmotionEntity::COUNT];
    for e in entities {
        v[e.index()] = 1.0;
    }
    v
}

/// Keyword (possibly several tokens) to entity table.
#[derive(Clone, Debug)]
pub struct KeywordMap {
    // first token -> candidate keywords (token lists) with their entity
    by_first: HashMap<String, Vec<(Vec<String>, EmotionEntity)>>,
    len: usize,
}

impl KeywordMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut by_first: HashMap<String, Vec<(Vec<String>, EmotionEntity)>> = HashMap::new();
        let mut len = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (kw, entity) = line
                .split_once('\t')
                .ok_or_else(|| invalid!("keyword map line {}: missing TAB", i + 1))?;
            let entity: EmotionEntity = entity
                .trim()
                .parse()
                .map_err(|_| invalid!("keyword map line {}: unknown entity `{}`", i + 1, entity.trim()))?;
            let tokens = tokenize(kw);
            let Some(first) = tokens.first().cloned() else {
                return Err(invalid!("keyword map line {}: empty keyword", i + 1));
            };
            let bucket = by_first.entry(first).or_default();
            bucket.push((tokens, entity));
            // longest keywords are tried first
            bucket.sort_by_key(|b| std::cmp::Reverse(b.0.len()));
            len += 1;
        }
        Ok(Self { by_first, len })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Entities in order of first mention, deduplicated. May be empty.
    pub fn scan(&self, text: &str) -> Vec<EmotionEntity> {
        let tokens = tokenize(text);
        let mut found = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let mut advance = 1;
            if let Some(cands) = self.by_first.get(&tokens[i]) {
                for (kw, entity) in cands {
                    if tokens[i..].starts_with(kw) {
                        if !found.contains(entity) {
                            found.push(*entity);
                        }
                        advance = kw.len();
                        break;
                    }
                }
            }
            i += advance;
        }
        found
    }
}

impl Default for KeywordMap {
    fn default() -> Self {
        Self::parse(DEFAULT_KEYWORDS).expect("shipped keyword map parses")
    }
}

/// Maps an emotion instruction to entities from the closed vocabulary.
pub trait EntityAnalyzer {
    fn analyze(&self, rec: &InstructionRecord) -> Result<Vec<EmotionEntity>>;
}

#[derive(Clone, Debug, Default)]
pub struct RuleAnalyzer {
    pub keywords: KeywordMap,
}

impl EntityAnalyzer for RuleAnalyzer {
    fn analyze(&self, rec: &InstructionRecord) -> Result<Vec<EmotionEntity>> {
        analyze_rule_with(&self.keywords, rec)
    }
}

pub(crate) fn require_emotion(rec: &InstructionRecord) -> Result<()> {
    if rec.kind != InstructionKind::Emotion {
        return Err(invalid!(
            "analyzer needs an emotion instruction, `{}` is {}",
            rec.sample_id,
            rec.kind.as_str()
        ));
    }
    Ok(())
}

pub fn analyze_rule_with(map: &KeywordMap, rec: &InstructionRecord) -> Result<Vec<EmotionEntity>> {
    require_emotion(rec)?;
    let found = map.scan(&rec.text);
    Ok(if found.is_empty() {
        vec![EmotionEntity::Neutral]
    } else {
        found
    })
}

/// Rule analysis with the shipped keyword map.
pub fn analyze_rule(rec: &InstructionRecord) -> Result<Vec<EmotionEntity>> {
    analyze_rule_with(&KeywordMap::default(), rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfront::InstructionSource;
    use proptest::prelude::*;

    fn emo(text: &str) -> InstructionRecord {
        InstructionRecord::new("s", InstructionKind::Emotion, text, InstructionSource::Fixture).unwrap()
    }

    #[test]
    fn furious_is_angry() {
        assert_eq!(
            analyze_rule(&emo("She is absolutely furious.")).unwrap(),
            [EmotionEntity::Angry]
        );
    }

    #[test]
    fn default_neutral() {
        assert_eq!(
            analyze_rule(&emo("Speaks about the weather.")).unwrap(),
            [EmotionEntity::Neutral]
        );
    }

    #[test]
    fn first_occurrence_order() {
        assert_eq!(
            analyze_rule(&emo("overjoyed at first, then tearful")).unwrap(),
            [EmotionEntity::Happy, EmotionEntity::Sad]
        );
        assert_eq!(
            analyze_rule(&emo("sad, happy, sad again")).unwrap(),
            [EmotionEntity::Sad, EmotionEntity::Happy]
        );
    }

    #[test]
    fn wrong_kind_rejected() {
        let r = InstructionRecord::new("s", InstructionKind::Duration, "furious", InstructionSource::Fixture).unwrap();
        assert!(analyze_rule(&r).is_err());
    }

    #[test]
    fn multi_word_keywords() {
        let m = KeywordMap::parse("on edge\tfear\nedge\tangry\n").unwrap();
        assert_eq!(m.scan("always on edge"), [EmotionEntity::Fear]);
        assert_eq!(m.scan("the edge"), [EmotionEntity::Angry]);
    }

    #[test]
    fn parse_errors() {
        assert!(KeywordMap::parse("glad happy").is_err());
        assert!(KeywordMap::parse("glad\tecstatic").is_err());
    }

    #[test]
    fn entity_round_trip() {
        for e in EmotionEntity::ALL {
            assert_eq!(e.as_str().parse::<EmotionEntity>().unwrap(), e);
            assert_eq!(EmotionEntity::ALL[e.index()], e);
        }
    }

    const WORDS: &[&str] = &[
        "happy",
        "furious",
        "calm",
        "the",
        "voice",
        "tearful",
        "scared",
        "slowly",
        "disgusted",
        "astonished",
        "and",
        "then",
    ];

    proptest! {
        #[test]
        fn concatenation_keeps_prefix(
            x in prop::collection::vec(prop::sample::select(WORDS), 1..8),
            y in prop::collection::vec(prop::sample::select(WORDS), 1..8),
        ) {
            let x = x.join(" ");
            let y = y.join(" ");
            let map = KeywordMap::default();
            prop_assume!(!map.scan(&x).is_empty());
            let ex = analyze_rule(&emo(&x)).unwrap();
            let exy = analyze_rule(&emo(&format!("{x}. {y}"))).unwrap();
            prop_assert!(exy.starts_with(&ex));
            prop_assert!(exy.iter().all(|e| EmotionEntity::ALL.contains(e)));
        }
    }
}
