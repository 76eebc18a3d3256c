//! The full method against each single ablation on a cross-domain stream.

use stagebank::data::{StreamMode, StreamSpec};
use stagebank::harness::experiment::ablate;
use stagebank::harness::ExperimentConfig;

fn main() -> stagebank::Result<()> {
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        stream: StreamSpec { mode: StreamMode::Xdcil, domain_shift: 8.0, ..StreamSpec::default() },
        ..ExperimentConfig::default()
    };
    let out = ablate(&cfg)?;
    println!("{:<16} {:>8} {:>8}", "variant", "FAA", "FF");
    for e in &out.report.entries {
        println!("{:<16} {:>8.2} {:>8.2}", e.label, 100.0 * e.faa.mean, 100.0 * e.ff.mean);
    }
    Ok(())
}
