//! Script to phonemes to feature rows, plus the hashed instruction embedding.
//!
//! cargo run --example g2p_and_features -- "see you tomorrow"

use dubalign::numerics::ParamStore;
use dubalign::textfront::{embed_text, g2p, PhonemeEmbedder, PhonemeInventory, WORD_BOUNDARY};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dubalign::Result<()> {
    let script = std::env::args().nth(1).unwrap_or_else(|| "see you tomorrow".into());
    let seq = g2p(&script)?;
    println!("{script:?} -> {} phonemes", seq.len());
    println!("  {}", seq.symbols().join(" "));
    let words = seq.iter().filter(|p| *p == WORD_BOUNDARY).count() + 1;
    println!("  {words} words");

    let embedder = PhonemeEmbedder::new(PhonemeInventory::default(), 16);
    let mut store = ParamStore::new();
    embedder.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
    let feats = embedder.forward(&store, &seq)?;
    println!("phoneme features {:?}", feats.matrix().shape());

    let instr = embed_text("Speak slowly and sadly.", 64)?;
    println!(
        "instruction embedding {:?}, first row {:.3?}",
        instr.shape(),
        &instr.row(0)[..4]
    );
    Ok(())
}
