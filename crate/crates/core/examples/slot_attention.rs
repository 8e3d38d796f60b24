//! Distills an instruction embedding into K prototypes and shows how the
//! tokens spread their attention over slots in each round.
//!
//! cargo run --example slot_attention -- [K] [rounds]

use dubalign::idd::{Aggregate, SlotDistiller, SLOTS};
use dubalign::numerics::{ParamStore, Tape};
use dubalign::textfront::{embed_text, tokenize};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dubalign::Result<()> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map_or(10, |a| a.parse().expect("K"));
    let rounds: usize = args.next().map_or(3, |a| a.parse().expect("rounds"));
    let text = "Please talk a little faster than usual.";
    let dim = 64;

    let distiller = SlotDistiller::new(dim, 2 * dim, Aggregate::Sum);
    let mut store = ParamStore::new();
    distiller.init(&mut store, k, &mut ChaCha8Rng::seed_from_u64(3));

    let mut tape = Tape::new();
    let x = tape.constant(embed_text(text, dim)?);
    let slots = tape.param(&store, SLOTS)?;
    let trace = distiller.forward_tape(&mut tape, &store, x, slots, rounds)?;

    let tokens = tokenize(text);
    println!("{} tokens, {k} slots, {rounds} rounds", tokens.len());
    for (r, a) in trace.attention.iter().enumerate() {
        let a = tape.value(*a);
        // column n is token n's distribution over slots
        let mass: Vec<String> = (0..a.rows())
            .map(|i| format!("{:.2}", a.row(i).iter().sum::<f64>()))
            .collect();
        println!("round {}: slot mass [{}]", r + 1, mass.join(" "));
    }
    println!("prototypes {:?}", tape.value(trace.output).shape());
    Ok(())
}
