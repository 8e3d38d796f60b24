//! Deterministic text front-end: hashed instruction embeddings, rule-based
//! G2P, and the trainable phoneme embedder.

pub mod embed;
pub mod g2p;
pub mod phonemes;

pub use embed::{
    embed_instruction, embed_text, positional_encoding, tokenize, InstructionKind, InstructionRecord, InstructionSource,
};
pub use g2p::{g2p, G2p, Lexicon, PhonemeInventory, PhonemeSequence, WORD_BOUNDARY};
pub use phonemes::{embed_phonemes, PhonemeEmbedder, PhonemeFeatures, PHONEME_TABLE};
