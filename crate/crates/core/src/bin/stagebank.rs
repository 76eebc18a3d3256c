//! Command-line front end. Set `STAGEBANK_THREADS` to bound the worker pool.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use stagebank::data::{generate_stream, read_embeddings_with_dim, write_stream, StreamMode};
use stagebank::harness::bank::load_bank;
use stagebank::harness::experiment::{ablate, run, sweep_delta, write_outputs, ExperimentOutput};
use stagebank::harness::gradcheck::{run_gradcheck, ABS_FLOOR, REL_TOLERANCE};
use stagebank::harness::{ExperimentConfig, DEFAULT_DELTAS};
use stagebank::inference::predict_batch;
use stagebank::trainer::CandidateGrid;

#[derive(Parser)]
#[command(name = "stagebank", version, about = "Stage-isolated incremental classifiers with energy voting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream as ESNF files plus a manifest.
    Synth(Common),
    /// Train the configured method over every seed.
    Run(Common),
    /// Run the full method and its three ablations.
    Ablate(Common),
    /// One run per anchor value.
    SweepDelta {
        #[command(flatten)]
        common: Common,
        /// Comma-separated anchors; defaults to 0,-1,-3,-5,-10,-15.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        deltas: Vec<f64>,
    },
    /// Classify an ESNF file with a saved bank and write predictions.csv.
    Predict {
        #[arg(long)]
        bank: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable; replaces the configured seed list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Candidate temperatures as MIN:MAX:STEP.
    #[arg(long, value_parser = parse_psi)]
    psi: Option<CandidateGrid>,
    #[arg(long)]
    mode: Option<StreamMode>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    disable_anchor_loss: bool,
    #[arg(long)]
    disable_calibration: bool,
    #[arg(long)]
    shared_head: bool,
}

fn parse_psi(s: &str) -> Result<CandidateGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [min, max, step] = parts[..] else {
        return Err("expected MIN:MAX:STEP".into());
    };
    let num = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    CandidateGrid::new(num(min)?, num(max)?, num(step)?).map_err(|e| e.to_string())
}

impl Common {
    /// Loads the config file, if any, then applies flag overrides.
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if let Some(d) = self.delta {
            cfg.energy.anchor = d;
        }
        if let Some(l) = self.lambda {
            cfg.energy.lambda = l;
        }
        if let Some(e) = self.epochs {
            cfg.optimizer.epochs = e;
        }
        if let Some(b) = self.batch {
            cfg.optimizer.batch_size = b;
        }
        if let Some(p) = self.psi {
            cfg.psi = p;
        }
        if let Some(m) = self.mode {
            if cfg.manifest.is_some() {
                bail!("--mode applies to synthetic streams; the manifest fixes the mode");
            }
            cfg.stream.mode = m;
        }
        cfg.ablation.disable_anchor_loss |= self.disable_anchor_loss;
        cfg.ablation.disable_calibration |= self.disable_calibration;
        cfg.ablation.shared_head |= self.shared_head;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(out: &ExperimentOutput) {
    for e in &out.report.entries {
        println!(
            "{:<16} FAA {:6.2} ± {:4.2}  FF {:6.2} ± {:4.2}",
            e.label,
            100.0 * e.faa.mean,
            100.0 * e.faa.std,
            100.0 * e.ff.mean,
            100.0 * e.ff.std
        );
    }
    if let Some(s) = out.report.faa_spread {
        println!("FAA spread {:.2} points", 100.0 * s);
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(common) => {
            let cfg = common.config()?;
            let mut spec = cfg.stream.clone();
            if let Some(&s) = common.seeds.first() {
                spec.seed = s;
            }
            let stages = generate_stream(&spec)?;
            let manifest = write_stream(&common.out, spec.mode, &stages)?;
            println!("wrote {} stages, manifest {}", stages.len(), manifest.display());
        }
        Command::Run(common) => {
            let out = run(&common.config()?)?;
            write_outputs(&common.out, &out)?;
            summarize(&out);
        }
        Command::Ablate(common) => {
            let out = ablate(&common.config()?)?;
            write_outputs(&common.out, &out)?;
            summarize(&out);
        }
        Command::SweepDelta { common, deltas } => {
            let deltas = if deltas.is_empty() { DEFAULT_DELTAS.to_vec() } else { deltas };
            let out = sweep_delta(&common.config()?, &deltas)?;
            write_outputs(&common.out, &out)?;
            summarize(&out);
        }
        Command::Predict { bank, input, out } => {
            let bank = load_bank(&bank)?;
            let dim = bank.dim().context("bank has no heads")?;
            let records = read_embeddings_with_dim(&input, dim)?;
            let features: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
            let preds = predict_batch(&features, &bank)?;
            let mut csv = String::from("index,stage_id,label,chosen_stage,chosen_class\n");
            let mut correct = 0usize;
            for (i, (r, p)) in records.iter().zip(&preds).enumerate() {
                correct += usize::from(r.label == p.chosen_class);
                csv.push_str(&format!("{i},{},{},{},{}\n", r.stage_id, r.label, p.chosen_stage, p.chosen_class));
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("predictions.csv"), csv)?;
            println!("{} predictions, accuracy {:.4}", preds.len(), correct as f64 / preds.len().max(1) as f64);
        }
        Command::Gradcheck { instances, seed } => {
            let r = run_gradcheck(instances, seed)?;
            println!(
                "{} instances, {} coordinates, max relative error {:.3e}, max absolute error {:.3e}",
                r.instances, r.coordinates, r.max_rel_error, r.max_abs_error
            );
            if !r.passed() {
                bail!("{} coordinates exceed {REL_TOLERANCE:e} relative and {ABS_FLOOR:e} absolute", r.failures);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Ok(n) = std::env::var("STAGEBANK_THREADS") {
        match n.parse::<usize>() {
            Ok(n) => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            Err(_) => {
                eprintln!("error: STAGEBANK_THREADS must be a non-negative integer, got {n:?}");
                return ExitCode::from(2);
            }
        }
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
