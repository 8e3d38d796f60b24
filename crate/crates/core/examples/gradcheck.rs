//! Finite-difference gradient checks over the duration path, the prosody
//! path and the adapted analyzer, at the default model size.

use dubalign::idd::IddConfig;
use dubalign::numerics::GradCheckConfig;
use dubalign::training::{run_grad_suite, DubbingModel, ModelConfig};

fn main() -> dubalign::Result<()> {
    let model = DubbingModel::new(ModelConfig::default(), IddConfig::default())?;
    let rep = run_grad_suite(&model, 4, 0, &GradCheckConfig::default())?;
    for p in &rep.paths {
        let worst = p.report.worst().expect("coordinates checked");
        println!(
            "{:<9} {} coords, max rel err {:.2e} (worst at {}[{}])",
            p.path,
            p.report.checked.len(),
            p.report.max_rel_error,
            worst.name,
            worst.index
        );
    }
    println!("passed: {}", rep.passed);
    Ok(())
}
