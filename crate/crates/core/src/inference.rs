//! Stage selection by temperature voting and final class prediction.
//!
//! For a feature `x`, every head produces logits once. For each temperature in
//! the bank's pool the head with the highest confidence `T * logsumexp(z / T)`
//! wins a vote; the most frequent winner answers with the argmax of its logits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureRecord, StreamMode};
use crate::energy::{self, confidence_unchecked};
use crate::head::{EnergyConfig, StageHead};
use crate::{ClassId, Error, Result, StageId};

/// All stage heads plus the selected temperature pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBank {
    heads: Vec<StageHead>,
    omega: Vec<f64>,
    cfg: EnergyConfig,
    mode: StreamMode,
}

impl ModelBank {
    pub fn new(mode: StreamMode, cfg: EnergyConfig) -> Self {
        ModelBank { heads: Vec::new(), omega: Vec::new(), cfg, mode }
    }

    /// Assembles a bank from parts, checking every invariant.
    pub fn from_parts(
        mode: StreamMode,
        cfg: EnergyConfig,
        heads: Vec<StageHead>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let mut bank = ModelBank::new(mode, cfg);
        for h in heads {
            bank.push_head(h)?;
        }
        for t in omega {
            bank.push_temperature(t)?;
        }
        Ok(bank)
    }

    /// Adds the head of the next stage.
    pub fn push_head(&mut self, head: StageHead) -> Result<()> {
        let expected = self.heads.len() + 1;
        if head.stage_id() as usize != expected {
            return Err(Error::contract(format!(
                "bank expects stage {expected}, got head for stage {}",
                head.stage_id()
            )));
        }
        if let Some(first) = self.heads.first() {
            if first.dim() != head.dim() {
                return Err(Error::contract(format!(
                    "head dimension {} differs from bank dimension {}",
                    head.dim(),
                    first.dim()
                )));
            }
        }
        self.mode
            .check_label_sets(self.heads.iter().map(|h| h.label_set()).chain([head.label_set()]))?;
        self.heads.push(head);
        Ok(())
    }

    pub fn push_temperature(&mut self, t: f64) -> Result<()> {
        energy::Temperature::new(t)?;
        self.omega.push(t);
        Ok(())
    }

    pub(crate) fn replace_last_head(&mut self, head: StageHead) {
        *self.heads.last_mut().expect("bank has a head") = head;
    }

    pub fn heads(&self) -> &[StageHead] {
        &self.heads
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn cfg(&self) -> &EnergyConfig {
        &self.cfg
    }

    pub fn mode(&self) -> StreamMode {
        self.mode
    }

    pub fn num_stages(&self) -> usize {
        self.heads.len()
    }

    pub fn dim(&self) -> Option<usize> {
        self.heads.first().map(|h| h.dim())
    }

    /// Ω, or `[1.0]` while it is still empty.
    pub fn effective_omega(&self) -> &[f64] {
        if self.omega.is_empty() {
            &[1.0]
        } else {
            &self.omega
        }
    }

    fn check_ready(&self, feature: &[f64]) -> Result<()> {
        let dim = self.dim().ok_or_else(|| Error::contract("model bank is empty"))?;
        if feature.len() != dim {
            return Err(Error::contract(format!(
                "feature dimension {} does not match bank dimension {dim}",
                feature.len()
            )));
        }
        Ok(())
    }

    /// Logits of every head, in stage order.
    pub fn all_logits(&self, feature: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_ready(feature)?;
        Ok(self.logits_unchecked(feature))
    }

    pub(crate) fn logits_unchecked(&self, feature: &[f64]) -> Vec<Vec<f64>> {
        self.heads
            .iter()
            .map(|h| {
                let mut out = vec![0.0; h.num_classes()];
                let mut hidden = h.hidden_scratch();
                h.forward_into(feature, &mut hidden, &mut out);
                out
            })
            .collect()
    }
}

/// One stage vote cast at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub temperature: f64,
    pub stage: StageId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub chosen_stage: StageId,
    pub chosen_class: ClassId,
    pub votes: Vec<Vote>,
    /// Confidence of each head at `T = 1`, in stage order.
    pub confidences_at_1: Vec<f64>,
}

/// Index of the highest-confidence head at temperature `t`; ties go to the lowest index.
pub(crate) fn winning_head(logits: &[Vec<f64>], t: f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (s, z) in logits.iter().enumerate() {
        let h = confidence_unchecked(z, t);
        if h > best_score {
            best = s;
            best_score = h;
        }
    }
    best
}

fn votes_from_logits(logits: &[Vec<f64>], omega: &[f64]) -> Vec<Vote> {
    omega
        .iter()
        .map(|&t| Vote { temperature: t, stage: (winning_head(logits, t) + 1) as StageId })
        .collect()
}

/// Winning stage at every temperature of the effective pool.
pub fn stage_votes(feature: &[f64], bank: &ModelBank) -> Result<Vec<Vote>> {
    let logits = bank.all_logits(feature)?;
    Ok(votes_from_logits(&logits, bank.effective_omega()))
}

/// Most frequent stage among the votes. Equal counts go to the stage with the
/// higher confidence at `T = 1`, then to the smallest stage id.
pub fn select_stage(votes: &[Vote], confidences_at_1: &[f64]) -> Result<StageId> {
    if votes.is_empty() {
        return Err(Error::contract("no votes to aggregate"));
    }
    let mut counts: BTreeMap<StageId, usize> = BTreeMap::new();
    for v in votes {
        if v.stage == 0 || v.stage as usize > confidences_at_1.len() {
            return Err(Error::contract(format!("vote for unknown stage {}", v.stage)));
        }
        *counts.entry(v.stage).or_default() += 1;
    }
    let mut best: Option<(StageId, usize, f64)> = None;
    // ascending stage order, so only a strict improvement replaces the incumbent
    for (&stage, &count) in &counts {
        let conf = confidences_at_1[stage as usize - 1];
        let better = match best {
            None => true,
            Some((_, c, h)) => count > c || (count == c && conf > h),
        };
        if better {
            best = Some((stage, count, conf));
        }
    }
    Ok(best.expect("votes nonempty").0)
}

fn predict_from_logits(logits: Vec<Vec<f64>>, bank: &ModelBank) -> PredictionResult {
    let votes = votes_from_logits(&logits, bank.effective_omega());
    let confidences_at_1: Vec<f64> = logits.iter().map(|z| confidence_unchecked(z, 1.0)).collect();
    let chosen_stage = select_stage(&votes, &confidences_at_1).expect("votes are well-formed");
    let head = &bank.heads()[chosen_stage as usize - 1];
    let local = energy::argmax(&logits[chosen_stage as usize - 1]);
    PredictionResult { chosen_stage, chosen_class: head.label_set()[local], votes, confidences_at_1 }
}

/// Votes for a stage, then answers with the chosen head's top class.
pub fn predict(feature: &[f64], bank: &ModelBank) -> Result<PredictionResult> {
    let logits = bank.all_logits(feature)?;
    Ok(predict_from_logits(logits, bank))
}

/// Predicts every feature; results keep input order regardless of thread count.
pub fn predict_batch(features: &[&[f64]], bank: &ModelBank) -> Result<Vec<PredictionResult>> {
    for f in features {
        bank.check_ready(f)?;
    }
    Ok(features
        .par_iter()
        .map(|f| predict_from_logits(bank.logits_unchecked(f), bank))
        .collect())
}

/// Fraction of records whose predicted class equals their label.
pub fn accuracy(records: &[FeatureRecord], bank: &ModelBank) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("no records to evaluate"));
    }
    let features: Vec<&[f64]> = records.iter().map(|r| r.features.as_slice()).collect();
    let preds = predict_batch(&features, bank)?;
    let hits = preds.iter().zip(records).filter(|(p, r)| p.chosen_class == r.label).count();
    Ok(hits as f64 / records.len() as f64)
}

/// Fraction of records whose own stage's head has the strictly highest
/// confidence at `T = 1`.
pub fn criterion3_check(records: &[FeatureRecord], bank: &ModelBank) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("no records to evaluate"));
    }
    for r in records {
        bank.check_ready(&r.features)?;
    }
    let hits: usize = records
        .par_iter()
        .map(|r| {
            let own = r.stage_id as usize;
            if own == 0 || own > bank.num_stages() {
                return 0;
            }
            let scores: Vec<f64> = bank
                .logits_unchecked(&r.features)
                .iter()
                .map(|z| confidence_unchecked(z, 1.0))
                .collect();
            let mine = scores[own - 1];
            let strict = scores.iter().enumerate().all(|(s, h)| s == own - 1 || mine > *h);
            usize::from(strict)
        })
        .sum();
    Ok(hits as f64 / records.len() as f64)
}
