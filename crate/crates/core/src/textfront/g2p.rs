//! Lexicon-driven grapheme-to-phoneme conversion with per-letter fallback.
//!
//! Lexicon files are UTF-8, one `word<TAB>PH1 PH2 ...` entry per line;
//! blank lines and lines starting with `#` are ignored. Inventory files list
//! one phoneme symbol per line.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const DEFAULT_INVENTORY: &str = include_str!("../../data/phonemes.txt");
const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");

/// Inserted between the pronunciations of consecutive words.
pub const WORD_BOUNDARY: &str = "|";

const DIGIT_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Letter fallback used for out-of-lexicon words.
pub fn letter_phonemes(letter: char) -> &'static [&'static str] {
    match letter {
        'a' => &["AE"],
        'b' => &["B"],
        'c' => &["K"],
        'd' => &["D"],
        'e' => &["EH"],
        'f' => &["F"],
        'g' => &["G"],
        'h' => &["HH"],
        'i' => &["IH"],
        'j' => &["JH"],
        'k' => &["K"],
        'l' => &["L"],
        'm' => &["M"],
        'n' => &["N"],
        'o' => &["AA"],
        'p' => &["P"],
        'q' => &["K", "Y", "UW"],
        'r' => &["R"],
        's' => &["S"],
        't' => &["T"],
        'u' => &["AH"],
        'v' => &["V"],
        'w' => &["W"],
        'x' => &["K", "S"],
        'y' => &["Y"],
        'z' => &["Z"],
        _ => &[],
    }
}

/// Ordered phoneme symbol set. Index order defines embedding-table rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl PhonemeInventory {
    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        let mut index = HashMap::new();
        for line in text.lines() {
            let sym = line.trim();
            if sym.is_empty() || sym.starts_with('#') {
                continue;
            }
            if index.insert(sym.to_string(), symbols.len()).is_some() {
                return Err(invalid!("duplicate phoneme `{sym}` in inventory"));
            }
            symbols.push(sym.to_string());
        }
        if symbols.is_empty() {
            return Err(invalid!("empty phoneme inventory"));
        }
        Ok(Self { symbols, index })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.index.contains_key(symbol)
    }
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::parse(DEFAULT_INVENTORY).expect("shipped inventory parses")
    }
}

/// Phoneme tokens of one script.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhonemeSequence {
    phonemes: Vec<String>,
}

impl PhonemeSequence {
    pub fn new(phonemes: Vec<String>, inventory: &PhonemeInventory) -> Result<Self> {
        if phonemes.is_empty() {
            return Err(invalid!("empty phoneme sequence"));
        }
        if let Some(bad) = phonemes.iter().find(|p| !inventory.contains(p)) {
            return Err(invalid!("phoneme `{bad}` is not in the inventory"));
        }
        Ok(Self { phonemes })
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.phonemes
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.phonemes.iter().map(String::as_str)
    }
}

#[derive(Clone, Debug)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    /// Parses lexicon text, validating every phoneme against `inventory`.
    pub fn parse(text: &str, inventory: &PhonemeInventory) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, pron) = line
                .split_once('\t')
                .ok_or_else(|| invalid!("lexicon line {}: missing TAB separator", i + 1))?;
            let phones: Vec<String> = pron.split_whitespace().map(str::to_string).collect();
            if phones.is_empty() {
                return Err(invalid!("lexicon line {}: empty pronunciation", i + 1));
            }
            if let Some(bad) = phones.iter().find(|p| !inventory.contains(p)) {
                return Err(invalid!("lexicon line {}: phoneme `{bad}` not in inventory", i + 1));
            }
            entries.insert(word.trim().to_lowercase(), phones);
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: &Path, inventory: &PhonemeInventory) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, inventory)
    }

    pub fn shipped(inventory: &PhonemeInventory) -> Self {
        Self::parse(DEFAULT_LEXICON, inventory).expect("shipped lexicon parses")
    }

    pub fn lookup(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Lowercases and splits on anything that is not an ASCII letter, digit, or
/// in-word apostrophe. Digits become separate words.
pub fn normalize_words(script: &str) -> Vec<String> {
    let mut words = Vec::new();
    for raw in script.split(|c: char| !(c.is_ascii_alphanumeric() || c == '\'')) {
        let w = raw.trim_matches('\'').to_ascii_lowercase();
        let mut current = String::new();
        for c in w.chars() {
            if c.is_ascii_digit() {
                let word = std::mem::take(&mut current);
                if word.chars().any(|c| c.is_ascii_alphabetic()) {
                    words.push(word);
                }
                words.push(DIGIT_WORDS[c.to_digit(10).unwrap() as usize].to_string());
            } else {
                current.push(c);
            }
        }
        if current.chars().any(|c| c.is_ascii_alphabetic()) {
            words.push(current);
        }
    }
    words
}

#[derive(Clone, Debug)]
pub struct G2p {
    inventory: PhonemeInventory,
    lexicon: Lexicon,
}

impl Default for G2p {
    fn default() -> Self {
        let inventory = PhonemeInventory::default();
        let lexicon = Lexicon::shipped(&inventory);
        Self { inventory, lexicon }
    }
}

impl G2p {
    pub fn new(inventory: PhonemeInventory, lexicon: Lexicon) -> Result<Self> {
        if !inventory.contains(WORD_BOUNDARY) {
            return Err(invalid!("inventory lacks the word boundary `{WORD_BOUNDARY}`"));
        }
        for c in 'a'..='z' {
            if let Some(bad) = letter_phonemes(c).iter().find(|p| !inventory.contains(p)) {
                return Err(invalid!("letter fallback phoneme `{bad}` missing from inventory"));
            }
        }
        Ok(Self { inventory, lexicon })
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn word(&self, word: &str) -> Vec<String> {
        if let Some(p) = self.lexicon.lookup(word) {
            return p.to_vec();
        }
        word.chars()
            .flat_map(|c| letter_phonemes(c).iter().map(|s| s.to_string()))
            .collect()
    }

    /// Converts a script to phonemes, separating words with [`WORD_BOUNDARY`].
    pub fn convert(&self, script: &str) -> Result<PhonemeSequence> {
        let words = normalize_words(script);
        if words.is_empty() {
            return Err(invalid!("script `{script}` is empty after normalization"));
        }
        let mut out = Vec::new();
        for (i, w) in words.iter().enumerate() {
            if i > 0 {
                out.push(WORD_BOUNDARY.to_string());
            }
            out.extend(self.word(w));
        }
        PhonemeSequence::new(out, &self.inventory)
    }
}

/// [`G2p::convert`] with the shipped lexicon and inventory.
pub fn g2p(script: &str) -> Result<PhonemeSequence> {
    G2p::default().convert(script)
}
