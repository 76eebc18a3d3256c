//! Finite-difference check of the analytic training gradient.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::head::{Architecture, EnergyConfig, Example, StageHead};
use crate::Result;

/// Step for central differences.
pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub coordinates: usize,
    /// Largest relative error among coordinates whose absolute error exceeds the floor.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub failures: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

fn central_difference(head: &StageHead, batch: &[Example<'_>], cfg: &EnergyConfig) -> Result<Vec<f64>> {
    let mut probe = head.clone();
    let mut out = Vec::with_capacity(head.params().len());
    for i in 0..head.params().len() {
        let orig = head.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let up = probe.total_loss(batch, cfg)?;
        probe.params_mut()[i] = orig - FD_STEP;
        let down = probe.total_loss(batch, cfg)?;
        probe.params_mut()[i] = orig;
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

/// Draws `instances` random heads and batches (D <= 16, C <= 8, lambda cycling
/// through 0, 0.1, 1, linear and MLP heads alternating) and compares gradients.
pub fn run_gradcheck(instances: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        GradcheckReport { instances, coordinates: 0, max_rel_error: 0.0, max_abs_error: 0.0, failures: 0 };
    for i in 0..instances {
        let dim = rng.gen_range(1..=16);
        let classes = rng.gen_range(1..=8);
        let arch = if i % 2 == 0 { Architecture::Linear } else { Architecture::Mlp { hidden: rng.gen_range(1..=8) } };
        let lambda = [0.0, 0.1, 1.0][i % 3];
        let cfg = EnergyConfig {
            anchor: rng.gen_range(-15.0..=0.0),
            lambda,
            train_temperature: rng.gen_range(0.5..=2.0),
        };
        let mut head = StageHead::init(1, (0..classes as u32).collect(), dim, arch, &mut rng)?;
        for p in head.params_mut() {
            *p += rng.gen_range(-0.5..0.5);
        }
        let n = rng.gen_range(1..=8);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let batch: Vec<Example<'_>> = xs.iter().map(|x| (x.as_slice(), rng.gen_range(0..classes))).collect();

        let analytic = head.gradients(&batch, &cfg)?.values;
        let numeric = central_difference(&head, &batch, &cfg)?;
        for (a, n) in analytic.iter().zip(&numeric) {
            let diff = (a - n).abs();
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(diff);
            if diff > ABS_FLOOR {
                let rel = diff / a.abs().max(n.abs());
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > REL_TOLERANCE {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}
