//! Energy kernels shared by training, calibration and inference.
//!
//! A head's logits `z` over its label set define, at temperature `T`:
//!
//! - pair energy `E(x, y) = -z[y]`
//! - free energy `F_T(x) = -T * log sum_y exp(z[y] / T)`
//! - confidence score `H_T(x) = -F_T(x)`
//! - Gibbs probabilities `softmax(z / T)`
//!
//! All math is `f64` and every logsumexp goes through the max-shift form.

use crate::{Error, Result};

/// Strictly positive, finite temperature.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Temperature(value))
        } else {
            Err(Error::InvalidTemperature(value))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Temperature::new(value)
    }
}

/// Checks the logit-vector invariants: nonempty and all entries finite.
pub fn validate_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::contract("logit vector is empty"));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::contract(format!("logit {i} is not finite ({})", logits[i])));
    }
    Ok(())
}

/// Energy of an input/label pair: the negated logit of that class.
pub fn energy_of_pair(logits: &[f64], class_index: usize) -> Result<f64> {
    logits
        .get(class_index)
        .map(|z| -z)
        .ok_or(Error::IndexOutOfRange { index: class_index, len: logits.len() })
}

/// `log sum exp(v)` via `m + log sum exp(v - m)`.
pub fn stable_logsumexp(values: &[f64]) -> Result<f64> {
    validate_logits(values)?;
    Ok(logsumexp_unchecked(values))
}

#[cfg(test)]
pub(crate) fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// First index of the maximum entry.
#[inline]
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `sum_{k != argmax} exp((z_k - m) / t)`; the argmax term is exactly 1.
#[inline]
fn shifted_tail(values: &[f64], top: usize, inv_t: f64) -> f64 {
    let m = values[top];
    values
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != top)
        .map(|(_, v)| ((v - m) * inv_t).exp())
        .sum()
}

#[inline]
pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    confidence_unchecked(values, 1.0)
}

/// `T * logsumexp(z / T)`, computed as `m + T * log1p(sum_{k != top} exp((z_k - m) / T))`.
#[inline]
pub(crate) fn confidence_unchecked(logits: &[f64], t: f64) -> f64 {
    let top = argmax(logits);
    logits[top] + t * shifted_tail(logits, top, 1.0 / t).ln_1p()
}

/// Helmholtz free energy `-T * logsumexp(z / T)`.
pub fn free_energy(logits: &[f64], t: Temperature) -> Result<f64> {
    validate_logits(logits)?;
    Ok(-confidence_unchecked(logits, t.value()))
}

/// Confidence score `H = -F_T`, the temperature-scaled logsumexp of the logits.
pub fn confidence_score(logits: &[f64], t: Temperature) -> Result<f64> {
    validate_logits(logits)?;
    Ok(confidence_unchecked(logits, t.value()))
}

/// `softmax(z / T)`.
pub fn gibbs_probabilities(logits: &[f64], t: Temperature) -> Result<Vec<f64>> {
    validate_logits(logits)?;
    let mut out = vec![0.0; logits.len()];
    gibbs_into(logits, t.value(), &mut out);
    Ok(out)
}

/// Writes `softmax(z / t)` into `out` and returns the free energy at `t`.
#[inline]
pub(crate) fn gibbs_into(logits: &[f64], t: f64, out: &mut [f64]) -> f64 {
    let top = argmax(logits);
    let m = logits[top];
    let inv_t = 1.0 / t;
    let mut tail = 0.0;
    for (i, (o, z)) in out.iter_mut().zip(logits).enumerate() {
        if i == top {
            *o = 1.0;
        } else {
            *o = ((z - m) * inv_t).exp();
            tail += *o;
        }
    }
    let inv_sum = 1.0 / (1.0 + tail);
    out.iter_mut().for_each(|o| *o *= inv_sum);
    -(m + t * tail.ln_1p())
}
