//! Trainable phoneme embedding table plus position code.

use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::numerics::params::randn;
use crate::numerics::{ParamStore, Tape, Tensor2D, Var};
use crate::textfront::embed::positional_matrix;
use crate::textfront::g2p::{PhonemeInventory, PhonemeSequence};

pub const PHONEME_TABLE: &str = "text.phoneme_embedding";

/// `L_pho × d_m` phoneme feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PhonemeFeatures {
    matrix: Tensor2D,
}

impl PhonemeFeatures {
    pub fn new(matrix: Tensor2D, seq: &PhonemeSequence) -> Result<Self> {
        if matrix.rows() != seq.len() {
            return Err(shape_err!("{} feature rows for {} phonemes", matrix.rows(), seq.len()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Tensor2D {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }
}

#[derive(Clone, Debug)]
pub struct PhonemeEmbedder {
    inventory: PhonemeInventory,
    dim: usize,
}

impl PhonemeEmbedder {
    pub fn new(inventory: PhonemeInventory, dim: usize) -> Self {
        Self { inventory, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inventory(&self) -> &PhonemeInventory {
        &self.inventory
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let std = 1.0 / (self.dim as f64).sqrt();
        store.insert(PHONEME_TABLE, randn(rng, self.inventory.len(), self.dim, std));
    }

    pub fn indices(&self, seq: &PhonemeSequence) -> Result<Vec<usize>> {
        seq.iter()
            .map(|p| {
                self.inventory
                    .index_of(p)
                    .ok_or_else(|| invalid!("phoneme `{p}` is not in the inventory"))
            })
            .collect()
    }

    pub fn forward_tape(&self, tape: &mut Tape, store: &ParamStore, seq: &PhonemeSequence) -> Result<Var> {
        let idx = self.indices(seq)?;
        if idx.is_empty() {
            return Err(invalid!("empty phoneme sequence"));
        }
        let table = tape.param(store, PHONEME_TABLE)?;
        if tape.value(table).shape() != (self.inventory.len(), self.dim) {
            return Err(shape_err!(
                "phoneme table is {:?}, expected {:?}",
                tape.value(table).shape(),
                (self.inventory.len(), self.dim)
            ));
        }
        let rows = idx.iter().map(|&i| tape.row(table, i)).collect::<Result<Vec<_>>>()?;
        let gathered = tape.stack_rows(&rows)?;
        let pe = tape.constant(positional_matrix(idx.len(), self.dim));
        tape.add(gathered, pe)
    }

    pub fn forward(&self, store: &ParamStore, seq: &PhonemeSequence) -> Result<PhonemeFeatures> {
        let mut tape = Tape::new();
        let v = self.forward_tape(&mut tape, store, seq)?;
        PhonemeFeatures::new(tape.value(v).clone(), seq)
    }
}

/// Embeds `seq` with the table stored in `store`.
pub fn embed_phonemes(
    seq: &PhonemeSequence,
    store: &ParamStore,
    inventory: &PhonemeInventory,
    d_m: usize,
) -> Result<PhonemeFeatures> {
    PhonemeEmbedder::new(inventory.clone(), d_m).forward(store, seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfront::g2p::g2p;
    use rand::SeedableRng;

    fn setup(dim: usize) -> (PhonemeEmbedder, ParamStore) {
        let e = PhonemeEmbedder::new(PhonemeInventory::default(), dim);
        let mut store = ParamStore::new();
        e.init_params(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        (e, store)
    }

    #[test]
    fn shape_matches_sequence() {
        let (e, store) = setup(32);
        let seq = g2p("the cat sat").unwrap();
        let f = e.forward(&store, &seq).unwrap();
        assert_eq!(f.matrix().shape(), (seq.len(), 32));
    }

    #[test]
    fn seven_phonemes_seven_rows() {
        let (e, store) = setup(16);
        let seq = g2p("the cat").unwrap();
        assert_eq!(seq.len(), 6);
        let seq = g2p("the cats").unwrap();
        assert_eq!(seq.len(), 7);
        assert_eq!(e.forward(&store, &seq).unwrap().matrix().shape(), (7, 16));
    }

    #[test]
    fn same_phoneme_differs_by_position() {
        let (e, store) = setup(32);
        let seq = g2p("cat cat").unwrap();
        let f = e.forward(&store, &seq).unwrap();
        let pe = positional_matrix(seq.len(), 32);
        for j in 0..32 {
            let d = f.matrix().get(0, j) - f.matrix().get(4, j);
            assert!((d - (pe.get(0, j) - pe.get(4, j))).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_table_gives_position_code() {
        let (e, mut store) = setup(32);
        let inv_len = e.inventory().len();
        store.set(PHONEME_TABLE, Tensor2D::zeros(inv_len, 32)).unwrap();
        let seq = g2p("hello world").unwrap();
        let f = e.forward(&store, &seq).unwrap();
        assert_eq!(f.matrix(), &positional_matrix(seq.len(), 32));
    }

    #[test]
    fn long_sequences() {
        let (e, store) = setup(8);
        let inv = PhonemeInventory::default();
        let phones: Vec<String> = (0..512).map(|i| inv.symbols()[i % inv.len()].clone()).collect();
        let seq = PhonemeSequence::new(phones, &inv).unwrap();
        assert_eq!(e.forward(&store, &seq).unwrap().len(), 512);
    }
}
