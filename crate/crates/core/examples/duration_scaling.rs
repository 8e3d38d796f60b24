//! Fitting predicted phoneme durations to a fixed video length.
//!
//! cargo run --example duration_scaling -- [frames]

use dubalign::idd::{scale_durations, ScaleMode};

fn main() -> dubalign::Result<()> {
    let frames: usize = std::env::args().nth(1).map_or(40, |a| a.parse().expect("frames"));
    let raw = [2.7, 0.2, 5.1, 3.3, 0.9, 7.4, 1.6];
    println!("raw       {raw:?} (sum {:.1})", raw.iter().sum::<f64>());
    for mode in [ScaleMode::Continuous, ScaleMode::Integer] {
        let out = scale_durations(&raw, frames, mode)?;
        let shown: Vec<String> = out.durations_frames.iter().map(|f| format!("{f:.2}")).collect();
        println!(
            "{:<10} [{}] sum {:.2}",
            format!("{mode:?}"),
            shown.join(", "),
            out.durations_frames.iter().sum::<f64>()
        );
    }
    match scale_durations(&raw, 5, ScaleMode::Integer) {
        Err(e) => println!("5 frames: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
