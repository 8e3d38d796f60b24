//! Entity embeddings and the pitch/energy predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::iec::entity::EmotionEntity;
use crate::layers::{CrossAttention, RecurrentPredictor};
use crate::numerics::{ParamStore, Tape, Tensor2D, Var};
use crate::textfront::embed::embed_tokens;

/// One row per entity: the hashed label vector plus the position code of
/// its place in the list.
pub fn embed_entities(entities: &[EmotionEntity], dim: usize) -> Result<Tensor2D> {
    if entities.is_empty() {
        return Err(invalid!("no entities to embed"));
    }
    let tokens: Vec<String> = entities.iter().map(|e| e.as_str().to_string()).collect();
    embed_tokens(&tokens, dim)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProsodyPrediction {
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ProsodyModel {
    pub fuse: CrossAttention,
    pub predictor: RecurrentPredictor,
}

#[derive(Clone, Copy, Debug)]
pub struct ProsodyTrace {
    pub fused: Var,
    pub pitch: Var,
    pub energy: Var,
}

impl ProsodyModel {
    pub fn new(d_gte: usize, d_m: usize, hidden: usize) -> Self {
        Self {
            fuse: CrossAttention::new("iec", d_gte, d_m),
            predictor: RecurrentPredictor::new("iec.pred", 2 * d_m, hidden, &["pitch", "energy"]),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.fuse.init(store, rng);
        self.predictor.init(store, rng);
    }

    /// `entities`: `L_e × d_gte`; `phonemes`: `L_pho × d_m`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        entities: Var,
        phonemes: Var,
    ) -> Result<ProsodyTrace> {
        let fused = self.fuse.forward(tape, store, phonemes, entities)?;
        let x = tape.concat_cols(phonemes, fused)?;
        let heads = self.predictor.forward(tape, store, x)?;
        Ok(ProsodyTrace {
            fused,
            pitch: heads[0],
            energy: heads[1],
        })
    }

    pub fn predict(&self, store: &ParamStore, entities: &Tensor2D, phonemes: &Tensor2D) -> Result<ProsodyPrediction> {
        let mut tape = Tape::new();
        let e = tape.constant(entities.clone());
        let p = tape.constant(phonemes.clone());
        let t = self.forward_tape(&mut tape, store, e, p)?;
        Ok(ProsodyPrediction {
            pitch: tape.value(t.pitch).data().to_vec(),
            energy: tape.value(t.energy).data().to_vec(),
        })
    }
}

/// Free-function form of [`ProsodyModel::predict`].
pub fn predict_prosody(
    model: &ProsodyModel,
    store: &ParamStore,
    phonemes: &Tensor2D,
    entities: &Tensor2D,
) -> Result<ProsodyPrediction> {
    model.predict(store, entities, phonemes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textfront::positional_encoding;

    #[test]
    fn neutral_shape() {
        assert_eq!(embed_entities(&[EmotionEntity::Neutral], 64).unwrap().shape(), (1, 64));
        assert!(embed_entities(&[], 64).is_err());
    }

    #[test]
    fn swapped_order_swaps_rows() {
        use EmotionEntity::*;
        let a = embed_entities(&[Happy, Sad], 32).unwrap();
        let b = embed_entities(&[Sad, Happy], 32).unwrap();
        let (p0, p1) = (positional_encoding(0, 32), positional_encoding(1, 32));
        for j in 0..32 {
            // a[0] = happy + pe0, b[1] = happy + pe1
            assert!((a.get(0, j) - b.get(1, j) - (p0[j] - p1[j])).abs() < 1e-12);
            assert!((a.get(1, j) - b.get(0, j) - (p1[j] - p0[j])).abs() < 1e-12);
        }
        assert_eq!(a, embed_entities(&[Happy, Sad], 32).unwrap());
    }
}
