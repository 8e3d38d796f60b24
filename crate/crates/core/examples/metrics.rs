//! The evaluation metrics on small hand-made inputs.

use dubalign::eval::{divergence, duration_divergence, emo_sim, wer_text, DivergenceKind};
use dubalign::iec::{multi_hot, EmotionEntity};

fn main() -> dubalign::Result<()> {
    let reference = "I told you, we leave at dawn.";
    for hyp in ["i told you we leave at dawn", "I told you we leave at noon", "we leave"] {
        println!("WER {:.3}  {hyp:?}", wer_text(reference, hyp)?);
    }

    let gt = [3.0, 5.0, 2.0, 6.0];
    for pred in [
        [3.0, 5.0, 2.0, 6.0],
        [6.0, 10.0, 4.0, 12.0],
        [4.0, 4.0, 4.0, 4.0],
        [1.0, 9.0, 1.0, 9.0],
    ] {
        println!(
            "DD {:.5} (sym-KL {:.5})  {pred:?}",
            duration_divergence(&pred, &gt)?,
            divergence(&pred, &gt, DivergenceKind::SymKl)?
        );
    }

    let truth = multi_hot(&[EmotionEntity::Sad, EmotionEntity::Fear]);
    for got in [
        vec![EmotionEntity::Sad, EmotionEntity::Fear],
        vec![EmotionEntity::Sad],
        vec![EmotionEntity::Angry],
    ] {
        println!("EMO-SIM {:6.2}  {got:?}", emo_sim(&multi_hot(&got), &truth)?);
    }
    Ok(())
}
