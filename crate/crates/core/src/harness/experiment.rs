//! Full runs, ablations and anchor sweeps over a list of seeds.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use super::bank::save_bank;
use super::report::{Report, ReportEntry, ReportKind, SeedResult};
use super::{AblationFlags, ExperimentConfig};
use crate::data::{FeatureRecord, StageDataset, StreamMode};
use crate::inference::{criterion3_check, ModelBank};
use crate::metrics::{faa, ff, AccuracyMatrix};
use crate::trainer::run_stream;
use crate::{Error, Result};

/// One seed's finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub result: SeedResult,
    pub bank: ModelBank,
    pub matrix: AccuracyMatrix,
}

/// A labelled variant of the experiment, run over every configured seed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub entry: ReportEntry,
    pub runs: Vec<SeedRun>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: Report,
    pub variants: Vec<VariantRun>,
}

/// Trains one seed on a copy of `stages`.
pub fn run_seed(cfg: &ExperimentConfig, mode: StreamMode, stages: &[StageDataset], seed: u64) -> Result<SeedRun> {
    let opt = crate::trainer::OptimizerConfig { seed, ..cfg.optimizer };
    let outcome = run_stream(stages.to_vec(), mode, cfg.effective_energy(), opt, cfg.psi, cfg.stream_options())
        .map_err(|e| Error::Seed { seed, source: Box::new(e) })?;
    let tests: Vec<FeatureRecord> = stages.iter().flat_map(|s| s.test().iter().cloned()).collect();
    let result = SeedResult {
        seed,
        faa: faa(&outcome.matrix)?,
        ff: ff(&outcome.matrix)?,
        matrix: outcome.matrix.rows().to_vec(),
        omega_size: outcome.bank.omega().len(),
        omega: outcome.bank.omega().to_vec(),
        criterion3: criterion3_check(&tests, &outcome.bank)?,
        train_free_energy: outcome.train_free_energy,
    };
    Ok(SeedRun { result, bank: outcome.bank, matrix: outcome.matrix })
}

/// Runs every seed of `cfg` in parallel; results keep the configured seed order.
pub fn run_variant(
    cfg: &ExperimentConfig,
    mode: StreamMode,
    stages: &[StageDataset],
    label: &str,
    delta: Option<f64>,
) -> Result<VariantRun> {
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, mode, stages, seed))
        .collect::<Result<Vec<_>>>()?;
    let entry = ReportEntry::new(
        label,
        delta,
        cfg.effective_energy(),
        cfg.ablation,
        runs.iter().map(|r| r.result.clone()).collect(),
    );
    Ok(VariantRun { entry, runs })
}

fn finish(
    kind: ReportKind,
    cfg: &ExperimentConfig,
    mode: StreamMode,
    variants: Vec<VariantRun>,
    start: Instant,
) -> ExperimentOutput {
    let mut report = Report::new(kind, cfg.clone(), mode, variants.iter().map(|v| v.entry.clone()).collect());
    report.wall_time_secs = start.elapsed().as_secs_f64();
    ExperimentOutput { report, variants }
}

/// The configured method, ablation flags included, over all seeds.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    cfg.validate()?;
    let (mode, stages) = cfg.load_stages()?;
    let v = run_variant(cfg, mode, &stages, "run", None)?;
    Ok(finish(ReportKind::Run, cfg, mode, vec![v], start))
}

/// Labels and flags of the ablation variants, full method first.
pub const ABLATIONS: [(&str, AblationFlags); 4] = [
    ("full", AblationFlags { disable_anchor_loss: false, disable_calibration: false, shared_head: false }),
    ("no_anchor_loss", AblationFlags { disable_anchor_loss: true, disable_calibration: false, shared_head: false }),
    ("no_calibration", AblationFlags { disable_anchor_loss: false, disable_calibration: true, shared_head: false }),
    ("shared_head", AblationFlags { disable_anchor_loss: false, disable_calibration: false, shared_head: true }),
];

/// The full method and each single ablation on identical seeds and data.
/// Ablation flags already set in `cfg` are ignored.
pub fn ablate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    cfg.validate()?;
    let (mode, stages) = cfg.load_stages()?;
    let variants = ABLATIONS
        .iter()
        .map(|(label, flags)| {
            let c = ExperimentConfig { ablation: *flags, ..cfg.clone() };
            run_variant(&c, mode, &stages, label, None)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(ReportKind::Ablate, cfg, mode, variants, start))
}

/// One run per anchor value, everything else fixed.
pub fn sweep_delta(cfg: &ExperimentConfig, deltas: &[f64]) -> Result<ExperimentOutput> {
    let start = Instant::now();
    if deltas.is_empty() {
        return Err(Error::Config { field: "deltas".into(), message: "need at least one value".into() });
    }
    cfg.validate()?;
    let (mode, stages) = cfg.load_stages()?;
    let variants = deltas
        .iter()
        .map(|&d| {
            let mut c = cfg.clone();
            c.energy.anchor = d;
            c.energy.validate()?;
            run_variant(&c, mode, &stages, &format!("delta={d}"), Some(d))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(ReportKind::SweepDelta, cfg, mode, variants, start))
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Writes `report.json` plus, per variant and seed, the accuracy matrix as
/// CSV and the model bank.
pub fn write_outputs(dir: impl AsRef<Path>, out: &ExperimentOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for v in &out.variants {
        let stem = file_stem(&v.entry.label);
        for r in &v.runs {
            let seed = r.result.seed;
            fs::write(dir.join(format!("{stem}-seed{seed}-accuracy.csv")), r.matrix.to_csv())?;
            save_bank(dir.join(format!("{stem}-seed{seed}.bank")), &r.bank)?;
        }
    }
    fs::write(dir.join("report.json"), out.report.to_json())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::StreamSpec;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seeds: vec![0, 1],
            stream: StreamSpec {
                num_stages: 2,
                classes_per_stage: 3,
                feature_dim: 4,
                train_per_class: 20,
                test_per_class: 10,
                ..StreamSpec::default()
            },
            ..ExperimentConfig::default()
        };
        cfg.optimizer.epochs = 5;
        cfg.optimizer.batch_size = 16;
        cfg
    }

    #[test]
    fn run_reports_every_seed() {
        let out = run(&tiny()).unwrap();
        let e = &out.report.entries[0];
        assert_eq!(e.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![0, 1]);
        assert!(e.seeds.iter().all(|s| s.matrix.len() == 2 && s.omega_size == 1));
    }

    #[test]
    fn single_stage_has_zero_forgetting() {
        let mut cfg = tiny();
        cfg.seeds = vec![5];
        cfg.stream.num_stages = 1;
        let out = run(&cfg).unwrap();
        let s = &out.report.entries[0].seeds[0];
        assert_eq!(s.ff, 0.0);
        assert_eq!(out.report.entries[0].faa.std, 0.0);
        assert!(s.faa > 0.0);
    }

    #[test]
    fn calibration_ablation_is_a_no_op_on_one_stage() {
        let mut cfg = tiny();
        cfg.stream.num_stages = 1;
        let out = ablate(&cfg).unwrap();
        let full = out.report.entry("full").unwrap();
        let nocal = out.report.entry("no_calibration").unwrap();
        assert_eq!(full.seeds, nocal.seeds);
    }

    #[test]
    fn sweep_entry_matches_standalone_run() {
        let cfg = tiny();
        let sweep = sweep_delta(&cfg, &[-10.0, -3.0]).unwrap();
        let single = run(&cfg).unwrap();
        assert_eq!(sweep.report.entries[0].seeds, single.report.entries[0].seeds);
        let one = sweep_delta(&cfg, &[-5.0]).unwrap();
        assert_eq!(one.report.faa_spread, Some(0.0));
        assert!(sweep_delta(&cfg, &[]).is_err());
    }
}
