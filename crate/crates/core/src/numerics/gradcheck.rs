//! Central finite-difference check of analytic gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::params::{Grads, ParamStore};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub samples: usize,
    pub tolerance: f64,
    pub step: f64,
    /// Denominator floor for the relative error, so that coordinates whose
    /// true gradient is zero compare by absolute difference.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            samples: 32,
            tolerance: 1e-3,
            step: 1e-5,
            abs_floor: 1e-6,
            seed: 0x9e37_79b9,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub checked: Vec<CoordinateCheck>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checked.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `objective`'s analytic gradient against central differences on
/// sampled coordinates of the non-frozen entries of `store`.
///
/// Coordinates are drawn round-robin over tensors (in a shuffled order) so
/// that small tensors such as biases are covered alongside large ones.
pub fn grad_check<F>(objective: F, store: &ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Grads)>,
{
    let (base_loss, grads) = objective(store)?;
    if !base_loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "grad_check aborted: loss is {base_loss} at the base point"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tensors: Vec<(String, usize)> = store
        .iter()
        .filter(|(_, e)| !e.frozen)
        .map(|(n, e)| (n.clone(), e.value.data().len()))
        .filter(|(_, len)| *len > 0)
        .collect();
    tensors.shuffle(&mut rng);
    let total: usize = tensors.iter().map(|(_, l)| l).sum();
    let wanted = cfg.samples.min(total);

    let mut picked: Vec<(String, usize)> = Vec::with_capacity(wanted);
    let mut cursor = 0;
    while picked.len() < wanted {
        let (name, len) = &tensors[cursor % tensors.len()];
        cursor += 1;
        let already = picked.iter().filter(|(n, _)| n == name).count();
        if already >= *len {
            continue;
        }
        loop {
            let idx = rng.random_range(0..*len);
            if !picked.iter().any(|(n, i)| n == name && *i == idx) {
                picked.push((name.clone(), idx));
                break;
            }
        }
    }

    let mut checked = Vec::with_capacity(picked.len());
    let mut work = store.clone();
    for (name, index) in picked {
        let original = work.get(&name)?.data()[index];
        let eval_at = |work: &mut ParamStore, v: f64| -> Result<f64> {
            work.entry_mut(&name)?.value.data_mut()[index] = v;
            let (l, _) = objective(work)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check aborted: loss is {l} after perturbing `{name}`[{index}]"
                )));
            }
            Ok(l)
        };
        let plus = eval_at(&mut work, original + cfg.step)?;
        let minus = eval_at(&mut work, original - cfg.step)?;
        work.entry_mut(&name)?.value.data_mut()[index] = original;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grads.get(&name).map_or(0.0, |g| g.data()[index]);
        let denom = analytic.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel_error = (analytic - numeric).abs() / denom;
        checked.push(CoordinateCheck {
            name,
            index,
            analytic,
            numeric,
            rel_error,
        });
    }

    let max_rel_error = checked.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < cfg.tolerance,
        max_rel_error,
        tolerance: cfg.tolerance,
        checked,
    })
}
