//! Stage-by-stage training with cumulative temperature calibration.
//!
//! Each stage trains a fresh head on that stage's training split only, using
//! SGD with heavy-ball momentum, L2 weight decay and a per-iteration cosine
//! schedule. From the second stage on, every candidate temperature is scored
//! by how often the whole bank routes the current stage's training data to the
//! current head, and the best one is appended to the pool used for voting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureRecord, StageDataset, TrainSplit};
use crate::energy::Temperature;
use crate::head::{Architecture, EnergyConfig, Example, StageHead};
use crate::inference::{self, winning_head, ModelBank};
use crate::metrics::AccuracyMatrix;
use crate::{Error, Result, StageId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub cosine: bool,
    /// Set per run from the experiment's seed list.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            epochs: 30,
            batch_size: 128,
            cosine: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config { field: field.into(), message });
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", format!("must be > 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        Ok(())
    }
}

/// Learning rate at iteration `step` of `total`: `base * (1 + cos(pi * step / total)) / 2`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()) / 2.0
}

/// Evenly spaced candidate temperatures `min, min + step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CandidateGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for CandidateGrid {
    fn default() -> Self {
        CandidateGrid { min: 0.001, max: 1.0, step: 0.001 }
    }
}

impl CandidateGrid {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let grid = CandidateGrid { min, max, step };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.min.is_finite()
            && self.max.is_finite()
            && self.step.is_finite()
            && self.min > 0.0
            && self.step > 0.0
            && self.max >= self.min;
        if !ok {
            return Err(Error::Config {
                field: "psi".into(),
                message: format!("need 0 < min <= max and step > 0, got {}:{}:{}", self.min, self.max, self.step),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The `i`-th candidate; the last one is exactly `max`.
    pub fn get(&self, i: usize) -> f64 {
        if i + 1 == self.len() {
            self.max
        } else {
            self.min + i as f64 * self.step
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Whether `t` is (numerically) one of the candidates.
    pub fn contains(&self, t: f64) -> bool {
        let i = ((t - self.min) / self.step).round();
        i >= 0.0 && (i as usize) < self.len() && (self.get(i as usize) - t).abs() <= 1e-12 * t.abs().max(1.0)
    }
}

/// Candidate grid plus the multiset of temperatures selected so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePools {
    pub candidates: CandidateGrid,
    pub selected: Vec<f64>,
}

impl TemperaturePools {
    pub fn new(candidates: CandidateGrid) -> Self {
        TemperaturePools { candidates, selected: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub head: StageHead,
    /// Mean total loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Trains `head` on one stage's training split.
pub fn train_stage(
    split: &TrainSplit,
    head: StageHead,
    cfg: &EnergyConfig,
    opt: &OptimizerConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    opt.validate()?;
    if split.records.is_empty() {
        return Err(Error::contract(format!("stage {} has no training data", split.stage_id)));
    }
    let mut targets = Vec::with_capacity(split.records.len());
    for (i, r) in split.records.iter().enumerate() {
        if r.stage_id != split.stage_id {
            return Err(Error::contract(format!("training record {i} belongs to stage {}", r.stage_id)));
        }
        if r.features.len() != head.dim() {
            return Err(Error::contract(format!("training record {i} has the wrong dimension")));
        }
        let local = head.local_index(r.label).ok_or_else(|| {
            Error::contract(format!("training label {} is outside the head's label set", r.label))
        })?;
        targets.push(local);
    }

    let mut head = head;
    let n = split.records.len();
    let per_epoch = n.div_ceil(opt.batch_size);
    let total_steps = per_epoch * opt.epochs;
    let mut rng = stage_rng(opt.seed, split.stage_id, RngPurpose::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; head.params().len()];
    let mut velocity = vec![0.0; head.params().len()];
    let mut batch: Vec<Example> = Vec::with_capacity(opt.batch_size);
    let mut trace = Vec::with_capacity(opt.epochs);
    let mut step = 0;

    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(opt.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| (split.records[i].features.as_slice(), targets[i])));
            let (loss, _) = head.accumulate_loss_and_gradient(&batch, cfg, &mut grad);
            if !loss.is_finite() {
                return Err(Error::Divergence { stage: split.stage_id, epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            let lr = if opt.cosine { cosine_lr(opt.learning_rate, step, total_steps) } else { opt.learning_rate };
            for ((p, v), g) in head.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = opt.momentum * *v + g + opt.weight_decay * *p;
                *p -= lr * *v;
            }
            step += 1;
        }
        if head.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { stage: split.stage_id, epoch });
        }
        trace.push(epoch_loss / n as f64);
    }
    Ok(StageOutcome { head, loss_trace: trace })
}

#[derive(Clone, Copy)]
enum RngPurpose {
    Init = 0,
    Shuffle = 1,
}

/// Independent stream per (seed, stage, purpose), so stages can be replayed in isolation.
fn stage_rng(seed: u64, stage: StageId, purpose: RngPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * stage as u64 + purpose as u64);
    rng
}

/// Seeded initial head for `stage`.
pub fn init_head(
    stage: StageId,
    label_set: Vec<crate::ClassId>,
    dim: usize,
    arch: Architecture,
    seed: u64,
) -> Result<StageHead> {
    StageHead::init(stage, label_set, dim, arch, &mut stage_rng(seed, stage, RngPurpose::Init))
}

fn check_heads(heads: &[StageHead], data: &[FeatureRecord]) -> Result<()> {
    let first = heads.first().ok_or_else(|| Error::contract("no heads"))?;
    if data.is_empty() {
        return Err(Error::contract("no records to score"));
    }
    if data.iter().any(|r| r.features.len() != first.dim()) || heads.iter().any(|h| h.dim() != first.dim()) {
        return Err(Error::contract("dimension mismatch between records and heads"));
    }
    Ok(())
}

fn bank_logits(heads: &[StageHead], data: &[FeatureRecord]) -> Vec<Vec<Vec<f64>>> {
    data.par_iter()
        .map(|r| {
            heads
                .iter()
                .map(|h| {
                    let mut out = vec![0.0; h.num_classes()];
                    h.forward_into(&r.features, &mut h.hidden_scratch(), &mut out);
                    out
                })
                .collect()
        })
        .collect()
}

fn count_stage_hits(logits: &[Vec<Vec<f64>>], data: &[FeatureRecord], heads: &[StageHead], t: f64) -> usize {
    logits
        .iter()
        .zip(data)
        .filter(|(z, r)| heads[winning_head(z, t)].stage_id() == r.stage_id)
        .count()
}

/// Fraction of records routed to their own stage's head at temperature `t`
/// (ties go to the smallest stage id).
pub fn stage_id_accuracy(data: &[FeatureRecord], heads: &[StageHead], t: Temperature) -> Result<f64> {
    check_heads(heads, data)?;
    let logits = bank_logits(heads, data);
    Ok(count_stage_hits(&logits, data, heads, t.value()) as f64 / data.len() as f64)
}

/// Scores every candidate on the current stage's data, appends the best one
/// (smallest on ties) to the selected pool and returns it. A bank with a
/// single head leaves the pools untouched.
pub fn calibrate_temperature(
    current: &[FeatureRecord],
    heads: &[StageHead],
    pools: &mut TemperaturePools,
) -> Result<Option<f64>> {
    if heads.len() < 2 {
        return Ok(None);
    }
    check_heads(heads, current)?;
    pools.candidates.validate()?;
    let logits = bank_logits(heads, current);
    let grid = pools.candidates;
    let hits: Vec<usize> = (0..grid.len())
        .into_par_iter()
        .map(|i| count_stage_hits(&logits, current, heads, grid.get(i)))
        .collect();
    let mut best = 0;
    for (i, h) in hits.iter().enumerate() {
        if *h > hits[best] {
            best = i;
        }
    }
    let t = grid.get(best);
    pools.selected.push(t);
    Ok(Some(t))
}

/// Switches for the full method and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    pub architecture: Architecture,
    /// Append a calibrated temperature after every stage past the first.
    pub calibrate: bool,
    /// Train one head across all stages instead of one head per stage.
    pub shared_head: bool,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions { architecture: Architecture::Linear, calibrate: true, shared_head: false }
    }
}

/// Everything a finished (or paused) stream run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutcome {
    pub bank: ModelBank,
    pub matrix: AccuracyMatrix,
    pub loss_traces: Vec<Vec<f64>>,
    /// Mean training free energy of each stage's own head at the training temperature.
    pub train_free_energy: Vec<f64>,
}

/// Sequential driver over a stream of stages.
///
/// Training data of a stage is dropped as soon as that stage is done; only
/// test splits are retained, for filling the accuracy matrix.
#[derive(Debug)]
pub struct StreamTrainer {
    bank: ModelBank,
    pools: TemperaturePools,
    matrix: AccuracyMatrix,
    seen_tests: Vec<Vec<FeatureRecord>>,
    opt: OptimizerConfig,
    options: StreamOptions,
    loss_traces: Vec<Vec<f64>>,
    train_free_energy: Vec<f64>,
    stages_done: usize,
}

impl StreamTrainer {
    pub fn new(
        mode: crate::data::StreamMode,
        cfg: EnergyConfig,
        opt: OptimizerConfig,
        grid: CandidateGrid,
        options: StreamOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        opt.validate()?;
        grid.validate()?;
        Ok(StreamTrainer {
            bank: ModelBank::new(mode, cfg),
            pools: TemperaturePools::new(grid),
            matrix: AccuracyMatrix::new(),
            seen_tests: Vec::new(),
            opt,
            options,
            loss_traces: Vec::new(),
            train_free_energy: Vec::new(),
            stages_done: 0,
        })
    }

    /// Continues a per-stage-head run from a bank saved after its last stage,
    /// together with that run's accuracy matrix and retained test splits.
    pub fn resume(
        bank: ModelBank,
        matrix: AccuracyMatrix,
        seen_tests: Vec<Vec<FeatureRecord>>,
        opt: OptimizerConfig,
        grid: CandidateGrid,
        options: StreamOptions,
    ) -> Result<Self> {
        if options.shared_head {
            return Err(Error::contract("resuming a shared-head run is not supported"));
        }
        let s = bank.num_stages();
        if matrix.num_stages() != s || seen_tests.len() != s {
            return Err(Error::contract("bank, accuracy matrix and test splits cover different stages"));
        }
        let mut pools = TemperaturePools::new(grid);
        pools.selected = bank.omega().to_vec();
        opt.validate()?;
        Ok(StreamTrainer {
            bank,
            pools,
            matrix,
            seen_tests,
            opt,
            options,
            loss_traces: Vec::new(),
            train_free_energy: Vec::new(),
            stages_done: s,
        })
    }

    pub fn bank(&self) -> &ModelBank {
        &self.bank
    }

    pub fn matrix(&self) -> &AccuracyMatrix {
        &self.matrix
    }

    pub fn seen_tests(&self) -> &[Vec<FeatureRecord>] {
        &self.seen_tests
    }

    /// Trains, calibrates and evaluates one stage. Returns the temperature
    /// appended to the pool, if any.
    pub fn step(&mut self, stage: StageDataset) -> Result<Option<f64>> {
        let expected = self.stages_done + 1;
        if stage.stage_id() as usize != expected {
            return Err(Error::contract(format!(
                "stream expects stage {expected}, got stage {}",
                stage.stage_id()
            )));
        }
        let dim = stage.dim().ok_or_else(|| Error::contract(format!("stage {expected} has no records")))?;
        if stage.test().is_empty() {
            return Err(Error::contract(format!("stage {expected} has no test data")));
        }
        let (split, test) = stage.into_splits();
        let cfg = *self.bank.cfg();

        let head = if self.options.shared_head {
            match self.bank.heads().first() {
                Some(h) => {
                    let mut h = h.clone();
                    h.extend_labels(&split.label_set, &mut stage_rng(self.opt.seed, split.stage_id, RngPurpose::Init));
                    h
                }
                None => init_head(1, split.label_set.clone(), dim, self.options.architecture, self.opt.seed)?,
            }
        } else {
            init_head(split.stage_id, split.label_set.clone(), dim, self.options.architecture, self.opt.seed)?
        };
        let outcome = train_stage(&split, head, &cfg, &self.opt)?;
        self.train_free_energy.push(mean_free_energy(&outcome.head, &split.records, cfg.train_temperature));
        self.loss_traces.push(outcome.loss_trace);
        if self.options.shared_head && !self.bank.heads().is_empty() {
            self.bank.replace_last_head(outcome.head);
        } else {
            self.bank.push_head(outcome.head)?;
        }

        let chosen = if self.options.calibrate && !self.options.shared_head {
            let t = calibrate_temperature(&split.records, self.bank.heads(), &mut self.pools)?;
            if let Some(t) = t {
                self.bank.push_temperature(t)?;
            }
            t
        } else {
            None
        };
        drop(split);

        self.seen_tests.push(test);
        let row = self
            .seen_tests
            .iter()
            .map(|t| inference::accuracy(t, &self.bank))
            .collect::<Result<Vec<f64>>>()?;
        self.matrix.push_row(row)?;
        self.stages_done += 1;
        Ok(chosen)
    }

    pub fn finish(self) -> StreamOutcome {
        StreamOutcome {
            bank: self.bank,
            matrix: self.matrix,
            loss_traces: self.loss_traces,
            train_free_energy: self.train_free_energy,
        }
    }
}

fn mean_free_energy(head: &StageHead, records: &[FeatureRecord], t: f64) -> f64 {
    let mut z = vec![0.0; head.num_classes()];
    let mut hidden = head.hidden_scratch();
    let total: f64 = records
        .iter()
        .map(|r| {
            head.forward_into(&r.features, &mut hidden, &mut z);
            -crate::energy::confidence_unchecked(&z, t)
        })
        .sum();
    total / records.len() as f64
}

/// Runs a whole stream from scratch.
pub fn run_stream(
    stages: Vec<StageDataset>,
    mode: crate::data::StreamMode,
    cfg: EnergyConfig,
    opt: OptimizerConfig,
    grid: CandidateGrid,
    options: StreamOptions,
) -> Result<StreamOutcome> {
    for (i, s) in stages.iter().enumerate() {
        if s.stage_id() as usize != i + 1 {
            return Err(Error::contract(format!("stage ids must be 1..S in order, found {} at position {}", s.stage_id(), i + 1)));
        }
    }
    let mut trainer = StreamTrainer::new(mode, cfg, opt, grid, options)?;
    for stage in stages {
        trainer.step(stage)?;
    }
    Ok(trainer.finish())
}
