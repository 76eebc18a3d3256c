//! FAA as a function of the free-energy anchor.

use stagebank::harness::experiment::sweep_delta;
use stagebank::harness::{ExperimentConfig, DEFAULT_DELTAS};

fn main() -> stagebank::Result<()> {
    let cfg = ExperimentConfig { seeds: vec![0], ..ExperimentConfig::default() };
    let out = sweep_delta(&cfg, &DEFAULT_DELTAS)?;
    for e in &out.report.entries {
        let fe = &e.seeds[0].train_free_energy;
        println!(
            "anchor {:>6}: FAA {:6.2}  mean training free energy {:.2}",
            e.delta.unwrap_or(f64::NAN),
            100.0 * e.faa.mean,
            fe.iter().sum::<f64>() / fe.len() as f64
        );
    }
    println!("spread {:.2} points", 100.0 * out.report.faa_spread.unwrap_or(0.0));
    Ok(())
}
