//! Per-stage classifier heads and their training objective.
//!
//! A head maps a frozen feature vector to logits over its own label set. The
//! default is a single affine layer; an optional one-hidden-layer `tanh` MLP is
//! available for streams where an affine boundary is too weak.
//!
//! The objective for one example `(x, y)` at training temperature `T` is
//!
//! ```text
//! ce(x, y) = (E(x, y) - F_T(x)) / T          = -log softmax(z / T)[y]
//! al(x)    = (F_T(x) - anchor)^2
//! total    = mean over batch of ce + lambda * al
//! ```
//!
//! and its gradient with respect to the logits is
//! `(p - onehot(y)) / T - 2 * lambda * (F_T - anchor) * p` with `p = softmax(z / T)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{self, Temperature};
use crate::{ClassId, Error, Result, StageId};

/// Anchor, balance weight and training temperature of the energy objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub anchor: f64,
    pub lambda: f64,
    pub train_temperature: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig { anchor: -10.0, lambda: 0.1, train_temperature: 1.0 }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.anchor.is_finite() {
            return Err(Error::Config { field: "anchor".into(), message: "must be finite".into() });
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config {
                field: "lambda".into(),
                message: format!("must be finite and >= 0, got {}", self.lambda),
            });
        }
        Temperature::new(self.train_temperature).map_err(|_| Error::Config {
            field: "train_temperature".into(),
            message: format!("must be finite and > 0, got {}", self.train_temperature),
        })?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Linear,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
}

fn default_hidden() -> usize {
    64
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Linear
    }
}

/// Classifier for one stage.
///
/// Parameters live in one flat buffer. Linear layout: `W (C x D) | b (C)`.
/// MLP layout: `W1 (H x D) | b1 (H) | W2 (C x H) | b2 (C)`. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StageHead {
    stage_id: StageId,
    label_set: Vec<ClassId>,
    dim: usize,
    arch: Architecture,
    params: Vec<f64>,
}

/// Gradient of the total loss, laid out exactly like [`StageHead::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub values: Vec<f64>,
}

impl HeadGradient {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// One training example as seen by a head: feature and local label index.
pub type Example<'a> = (&'a [f64], usize);

fn param_count(arch: Architecture, classes: usize, dim: usize) -> usize {
    match arch {
        Architecture::Linear => classes * dim + classes,
        Architecture::Mlp { hidden } => hidden * dim + hidden + classes * hidden + classes,
    }
}

fn check_label_set(labels: &[ClassId]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::contract("label set is empty"));
    }
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::contract("label set has duplicate entries"));
    }
    Ok(())
}

impl StageHead {
    /// Builds a head from explicit parameters, validating every invariant.
    pub fn from_parts(
        stage_id: StageId,
        label_set: Vec<ClassId>,
        dim: usize,
        arch: Architecture,
        params: Vec<f64>,
    ) -> Result<Self> {
        if stage_id == 0 {
            return Err(Error::contract("stage ids start at 1"));
        }
        check_label_set(&label_set)?;
        if dim == 0 {
            return Err(Error::contract("feature dimension must be >= 1"));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::contract("hidden width must be >= 1"));
        }
        let expected = param_count(arch, label_set.len(), dim);
        if params.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::contract("head parameters must be finite"));
        }
        Ok(StageHead { stage_id, label_set, dim, arch, params })
    }

    pub fn zeros(stage_id: StageId, label_set: Vec<ClassId>, dim: usize, arch: Architecture) -> Result<Self> {
        let n = param_count(arch, label_set.len(), dim);
        Self::from_parts(stage_id, label_set, dim, arch, vec![0.0; n])
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init<R: Rng + ?Sized>(
        stage_id: StageId,
        label_set: Vec<ClassId>,
        dim: usize,
        arch: Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        let mut head = Self::zeros(stage_id, label_set, dim, arch)?;
        let c = head.num_classes();
        match arch {
            Architecture::Linear => fill_uniform(&mut head.params[..c * dim], dim, rng),
            Architecture::Mlp { hidden } => {
                fill_uniform(&mut head.params[..hidden * dim], dim, rng);
                let w2 = hidden * dim + hidden;
                fill_uniform(&mut head.params[w2..w2 + c * hidden], hidden, rng);
            }
        }
        Ok(head)
    }

    pub fn stage_id(&self) -> StageId {
        self.stage_id
    }

    pub fn label_set(&self) -> &[ClassId] {
        &self.label_set
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Local index of a global class id.
    pub fn local_index(&self, label: ClassId) -> Option<usize> {
        self.label_set.iter().position(|l| *l == label)
    }

    /// Width of the layer feeding the output layer.
    fn out_fan_in(&self) -> usize {
        match self.arch {
            Architecture::Linear => self.dim,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    /// Offset of the output weight matrix.
    fn out_offset(&self) -> usize {
        match self.arch {
            Architecture::Linear => 0,
            Architecture::Mlp { hidden } => hidden * self.dim + hidden,
        }
    }

    /// Output-layer weights, `C x fan_in` row-major.
    pub fn weights(&self) -> &[f64] {
        let o = self.out_offset();
        &self.params[o..o + self.num_classes() * self.out_fan_in()]
    }

    /// Output-layer bias.
    pub fn bias(&self) -> &[f64] {
        let o = self.out_offset() + self.num_classes() * self.out_fan_in();
        &self.params[o..o + self.num_classes()]
    }

    /// Hidden layer `(W1, b1)` of the MLP variant.
    pub fn hidden_layer(&self) -> Option<(&[f64], &[f64])> {
        match self.arch {
            Architecture::Linear => None,
            Architecture::Mlp { hidden } => {
                let w = hidden * self.dim;
                Some((&self.params[..w], &self.params[w..w + hidden]))
            }
        }
    }

    fn check_feature(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::contract(format!(
                "feature dimension {} does not match head dimension {}",
                feature.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_feature(feature)?;
        let mut out = vec![0.0; self.num_classes()];
        let mut hidden = self.hidden_scratch();
        self.forward_into(feature, &mut hidden, &mut out);
        Ok(out)
    }

    pub(crate) fn hidden_scratch(&self) -> Vec<f64> {
        match self.arch {
            Architecture::Linear => Vec::new(),
            Architecture::Mlp { hidden } => vec![0.0; hidden],
        }
    }

    /// Forward pass without dimension checks. `hidden` receives the MLP activations.
    pub(crate) fn forward_into(&self, feature: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let input: &[f64] = match self.arch {
            Architecture::Linear => feature,
            Architecture::Mlp { hidden: h } => {
                let w1 = &self.params[..h * self.dim];
                let b1 = &self.params[h * self.dim..h * self.dim + h];
                for (j, a) in hidden.iter_mut().enumerate() {
                    *a = (dot(&w1[j * self.dim..(j + 1) * self.dim], feature) + b1[j]).tanh();
                }
                hidden
            }
        };
        let fan_in = input.len();
        let w = self.weights();
        let b = self.bias();
        for (k, o) in out.iter_mut().enumerate() {
            *o = dot(&w[k * fan_in..(k + 1) * fan_in], input) + b[k];
        }
    }

    fn check_label(&self, local_label: usize) -> Result<()> {
        if local_label >= self.num_classes() {
            return Err(Error::IndexOutOfRange { index: local_label, len: self.num_classes() });
        }
        Ok(())
    }

    /// Cross-entropy in energy form, `(E(x, y) - F_T(x)) / T`.
    pub fn ce_loss(&self, feature: &[f64], local_label: usize, cfg: &EnergyConfig) -> Result<f64> {
        self.check_label(local_label)?;
        let z = self.forward(feature)?;
        let t = cfg.train_temperature;
        let e = energy::energy_of_pair(&z, local_label)?;
        let f = energy::free_energy(&z, Temperature::new(t)?)?;
        Ok((e - f) / t)
    }

    /// Squared distance of the free energy from the anchor.
    pub fn anchor_loss(&self, feature: &[f64], cfg: &EnergyConfig) -> Result<f64> {
        let z = self.forward(feature)?;
        let f = energy::free_energy(&z, Temperature::new(cfg.train_temperature)?)?;
        Ok((f - cfg.anchor).powi(2))
    }

    /// Batch mean of `ce + lambda * al`.
    pub fn total_loss(&self, batch: &[Example<'_>], cfg: &EnergyConfig) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        let mut sum = 0.0;
        for &(x, y) in batch {
            sum += self.ce_loss(x, y, cfg)? + cfg.lambda * self.anchor_loss(x, cfg)?;
        }
        Ok(sum / batch.len() as f64)
    }

    /// Analytic gradient of [`StageHead::total_loss`].
    pub fn gradients(&self, batch: &[Example<'_>], cfg: &EnergyConfig) -> Result<HeadGradient> {
        self.validate_batch(batch)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_loss_and_gradient(batch, cfg, &mut grad);
        Ok(HeadGradient { values: grad })
    }

    pub(crate) fn validate_batch(&self, batch: &[Example<'_>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        for &(x, y) in batch {
            self.check_feature(x)?;
            self.check_label(y)?;
        }
        Ok(())
    }

    /// Writes the batch-mean gradient into `grad` (overwriting it) and returns
    /// `(mean total loss, mean free energy)`. Inputs must already be validated.
    pub(crate) fn accumulate_loss_and_gradient(
        &self,
        batch: &[Example<'_>],
        cfg: &EnergyConfig,
        grad: &mut [f64],
    ) -> (f64, f64) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let c = self.num_classes();
        let t = cfg.train_temperature;
        let scale = 1.0 / batch.len() as f64;
        let mut z = vec![0.0; c];
        let mut p = vec![0.0; c];
        let mut hidden = self.hidden_scratch();
        let mut dhidden = self.hidden_scratch();
        let mut loss = 0.0;
        let mut energy_sum = 0.0;

        for &(x, y) in batch {
            self.forward_into(x, &mut hidden, &mut z);
            let f = energy::gibbs_into(&z, t, &mut p);
            let ce = (-z[y] - f) / t;
            loss += ce + cfg.lambda * (f - cfg.anchor).powi(2);
            energy_sum += f;

            // dL/dz, already scaled by the batch mean
            let anchor_coeff = 2.0 * cfg.lambda * (f - cfg.anchor);
            for k in 0..c {
                let onehot = if k == y { 1.0 } else { 0.0 };
                p[k] = scale * ((p[k] - onehot) / t - anchor_coeff * p[k]);
            }
            let dz = &p;

            let input: &[f64] = match self.arch {
                Architecture::Linear => x,
                Architecture::Mlp { .. } => &hidden,
            };
            let fan_in = input.len();
            let wo = self.out_offset();
            let bo = wo + c * fan_in;
            for k in 0..c {
                let row = &mut grad[wo + k * fan_in..wo + (k + 1) * fan_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += dz[k] * v;
                }
                grad[bo + k] += dz[k];
            }

            if let Architecture::Mlp { hidden: h } = self.arch {
                let w2 = self.weights();
                for (j, dh) in dhidden.iter_mut().enumerate() {
                    let back: f64 = (0..c).map(|k| w2[k * h + j] * dz[k]).sum();
                    *dh = back * (1.0 - hidden[j] * hidden[j]);
                }
                let d = self.dim;
                for j in 0..h {
                    let row = &mut grad[j * d..(j + 1) * d];
                    for (g, v) in row.iter_mut().zip(x) {
                        *g += dhidden[j] * v;
                    }
                    grad[h * d + j] += dhidden[j];
                }
            }
        }
        (loss * scale, energy_sum * scale)
    }

    /// Appends output rows for labels not yet in the label set, keeping the
    /// existing parameters. Returns how many labels were added.
    pub fn extend_labels<R: Rng + ?Sized>(&mut self, labels: &[ClassId], rng: &mut R) -> usize {
        let fresh: Vec<ClassId> = {
            let mut seen = self.label_set.clone();
            let mut out = Vec::new();
            for &l in labels {
                if !seen.contains(&l) {
                    seen.push(l);
                    out.push(l);
                }
            }
            out
        };
        if fresh.is_empty() {
            return 0;
        }
        let fan_in = self.out_fan_in();
        let wo = self.out_offset();
        let c = self.num_classes();
        let mut params = self.params[..wo].to_vec();
        params.extend_from_slice(self.weights());
        let start = params.len();
        params.resize(start + fresh.len() * fan_in, 0.0);
        fill_uniform(&mut params[start..], fan_in, rng);
        params.extend_from_slice(&self.params[wo + c * fan_in..]);
        params.resize(params.len() + fresh.len(), 0.0);
        self.label_set.extend_from_slice(&fresh);
        self.params = params;
        fresh.len()
    }
}

fn fill_uniform<R: Rng + ?Sized>(dst: &mut [f64], fan_in: usize, rng: &mut R) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in dst {
        *v = rng.gen_range(-bound..bound);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
