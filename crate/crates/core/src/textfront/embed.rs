//! Frozen hashed token embeddings for instruction text.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::numerics::Tensor2D;

/// Seed mixed into every token hash.
pub const TOKEN_HASH_SEED: u64 = 0x1D5_0B0E_2024;

/// Per-component amplitude of the sinusoidal position code. Token vectors
/// are unit norm, so the code is kept small enough not to swamp them.
pub const POSITION_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum InstructionKind {
    Duration,
    Emotion,
}

impl InstructionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstructionKind::Duration => "duration",
            InstructionKind::Emotion => "emotion",
        }
    }
}

impl std::str::FromStr for InstructionKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duration" => Ok(Self::Duration),
            "emotion" => Ok(Self::Emotion),
            other => Err(invalid!("unknown instruction kind `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionSource {
    #[default]
    Fixture,
    Remote,
    Synthetic,
}

/// A natural-language speaking-rate or emotion instruction for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub sample_id: String,
    pub kind: InstructionKind,
    pub text: String,
    #[serde(default)]
    pub source: InstructionSource,
}

impl InstructionRecord {
    pub fn new(
        sample_id: impl Into<String>,
        kind: InstructionKind,
        text: impl Into<String>,
        source: InstructionSource,
    ) -> Result<Self> {
        let rec = Self {
            sample_id: sample_id.into(),
            kind,
            text: text.into(),
            source,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(invalid!("instruction for `{}` has empty text", self.sample_id));
        }
        if self.sample_id.is_empty() {
            return Err(invalid!("instruction has an empty sample_id"));
        }
        Ok(())
    }
}

/// Lowercased tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Unit-norm vector derived from a SHA-256 of the seed and token.
pub fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(TOKEN_HASH_SEED.to_le_bytes());
    h.update(token.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Scaled sinusoidal position code for one position.
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            POSITION_SCALE * if i % 2 == 0 { angle.sin() } else { angle.cos() }
        })
        .collect()
}

pub fn positional_matrix(len: usize, dim: usize) -> Tensor2D {
    let data = (0..len).flat_map(|p| positional_encoding(p, dim)).collect();
    Tensor2D::new(len, dim, data).expect("length matches")
}

/// Embeds a token list, one row per token plus its position code.
pub fn embed_tokens(tokens: &[String], dim: usize) -> Result<Tensor2D> {
    if tokens.is_empty() {
        return Err(invalid!("no tokens to embed"));
    }
    if dim < 8 {
        return Err(invalid!("embedding dimension {dim} is below 8"));
    }
    let mut data = Vec::with_capacity(tokens.len() * dim);
    for (pos, tok) in tokens.iter().enumerate() {
        let pe = positional_encoding(pos, dim);
        data.extend(token_vector(tok, dim).iter().zip(&pe).map(|(t, p)| t + p));
    }
    Tensor2D::new(tokens.len(), dim, data)
}

/// Instruction text to an `L_tok × dim` matrix.
pub fn embed_instruction(rec: &InstructionRecord, dim: usize) -> Result<Tensor2D> {
    embed_text(&rec.text, dim)
}

pub fn embed_text(text: &str, dim: usize) -> Result<Tensor2D> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(invalid!("instruction text `{text}` has no tokens"));
    }
    embed_tokens(&tokens, dim)
}
