//! Same label set every stage, shifted domain per stage. Forgetting is
//! flagged as advisory in the report for this setting.

use stagebank::data::{StreamMode, StreamSpec};
use stagebank::harness::experiment::run;
use stagebank::harness::ExperimentConfig;

fn main() -> stagebank::Result<()> {
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        stream: StreamSpec { mode: StreamMode::Dil, domain_shift: 8.0, ..StreamSpec::default() },
        ..ExperimentConfig::default()
    };
    let out = run(&cfg)?;
    let e = &out.report.entries[0];
    println!("FAA {:.2} ± {:.2}", 100.0 * e.faa.mean, 100.0 * e.faa.std);
    println!("FF  {:.2} ± {:.2} (advisory: {})", 100.0 * e.ff.mean, 100.0 * e.ff.std, out.report.ff_advisory);
    Ok(())
}
