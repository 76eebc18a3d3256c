//! Steps through a stream one stage at a time, showing the calibrated
//! temperature after each stage and the votes behind a single prediction.

use stagebank::data::{generate_stream, StreamSpec};
use stagebank::head::EnergyConfig;
use stagebank::inference::predict;
use stagebank::trainer::{CandidateGrid, OptimizerConfig, StreamOptions, StreamTrainer};

fn main() -> stagebank::Result<()> {
    let spec = StreamSpec { num_stages: 3, ..StreamSpec::default() };
    let stages = generate_stream(&spec)?;
    let probe = stages[1].test()[0].clone();

    let mut trainer = StreamTrainer::new(
        spec.mode,
        EnergyConfig::default(),
        OptimizerConfig::default(),
        CandidateGrid::default(),
        StreamOptions::default(),
    )?;
    for stage in stages {
        let id = stage.stage_id();
        match trainer.step(stage)? {
            Some(t) => println!("stage {id}: calibrated temperature {t}"),
            None => println!("stage {id}: single head, nothing to calibrate"),
        }
    }

    let p = predict(&probe.features, trainer.bank())?;
    for v in &p.votes {
        println!("T={:<6} votes for stage {}", v.temperature, v.stage);
    }
    println!("confidences at T=1: {:.3?}", p.confidences_at_1);
    println!(
        "chose stage {} class {} (true stage {} class {})",
        p.chosen_stage, p.chosen_class, probe.stage_id, probe.label
    );
    Ok(())
}
