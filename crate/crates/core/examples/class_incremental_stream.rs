//! A full class-incremental run: accuracy matrix, FAA and FF.

use stagebank::harness::experiment::run;
use stagebank::harness::ExperimentConfig;

fn main() -> stagebank::Result<()> {
    let cfg = ExperimentConfig { seeds: vec![0], ..ExperimentConfig::default() };
    let out = run(&cfg)?;
    let seed = &out.variants[0].runs[0];
    print!("{}", seed.matrix.to_csv());
    println!(
        "FAA {:.2}  FF {:.2}  temperatures {:?}",
        100.0 * seed.result.faa,
        100.0 * seed.result.ff,
        seed.result.omega
    );
    Ok(())
}
