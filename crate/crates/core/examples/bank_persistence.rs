//! Saves a trained bank, reloads it and checks the predictions agree.

use stagebank::data::StreamSpec;
use stagebank::harness::bank::{load_bank, save_bank};
use stagebank::harness::experiment::run;
use stagebank::harness::ExperimentConfig;
use stagebank::inference::predict_batch;

fn main() -> stagebank::Result<()> {
    let cfg = ExperimentConfig {
        seeds: vec![0],
        stream: StreamSpec { num_stages: 3, ..StreamSpec::default() },
        ..ExperimentConfig::default()
    };
    let (_, stages) = cfg.load_stages()?;
    let bank = run(&cfg)?.variants.remove(0).runs.remove(0).bank;

    let path = std::env::temp_dir().join("stagebank-example.bank");
    save_bank(&path, &bank)?;
    let loaded = load_bank(&path)?;
    println!("{} bytes on disk, {} heads, temperatures {:?}", std::fs::metadata(&path)?.len(), loaded.num_stages(), loaded.omega());

    let features: Vec<&[f64]> = stages.iter().flat_map(|s| s.test()).map(|r| r.features.as_slice()).collect();
    let same = predict_batch(&features, &bank)? == predict_batch(&features, &loaded)?;
    println!("{} predictions identical after reload: {same}", features.len());
    std::fs::remove_file(&path)?;
    Ok(())
}
