//! Run reports.
//!
//! Every command that trains writes one JSON document of this shape:
//!
//! ```text
//! {
//!   "schema": "stagebank.report/1",
//!   "kind": "run" | "ablate" | "sweep-delta",
//!   "config": { ...the full experiment config, defaults filled in... },
//!   "mode": "cil" | "dil" | "xdcil",
//!   "ff_advisory": false,            // true for DIL, which has no sharp stage boundary
//!   "entries": [
//!     {
//!       "label": "full",
//!       "delta": -10.0,                // sweep entries only
//!       "energy": {...}, "ablation": {...},
//!       "seeds": [
//!         { "seed": 0, "faa": 0.93, "ff": 0.01,
//!           "matrix": [[1.0], [0.98, 0.97], ...],
//!           "omega_size": 4, "omega": [...],
//!           "criterion3": 0.97, "train_free_energy": [...] }
//!       ],
//!       "faa": { "mean": ..., "std": ... },
//!       "ff":  { "mean": ..., "std": ... }
//!     }
//!   ],
//!   "faa_spread": 0.004,              // sweep reports only
//!   "wall_time_secs": 1.7
//! }
//! ```
//!
//! Accuracies are fractions in `[0, 1]`. FF lies in `[-1, 1]`; it is negative
//! when a stage ends above its best earlier accuracy. `std` is the sample
//! standard deviation over seeds, 0 for a single seed.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AblationFlags, ExperimentConfig};
use crate::data::StreamMode;
use crate::head::EnergyConfig;
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "stagebank.report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Run,
    Ablate,
    SweepDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub faa: f64,
    pub ff: f64,
    pub matrix: Vec<Vec<f64>>,
    pub omega_size: usize,
    pub omega: Vec<f64>,
    /// Fraction of test examples whose own stage head strictly wins at T = 1.
    pub criterion3: f64,
    pub train_free_energy: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<f64>,
    pub energy: EnergyConfig,
    pub ablation: AblationFlags,
    pub seeds: Vec<SeedResult>,
    pub faa: Summary,
    pub ff: Summary,
}

impl ReportEntry {
    pub fn new(
        label: impl Into<String>,
        delta: Option<f64>,
        energy: EnergyConfig,
        ablation: AblationFlags,
        seeds: Vec<SeedResult>,
    ) -> Self {
        let faas: Vec<f64> = seeds.iter().map(|s| s.faa).collect();
        let ffs: Vec<f64> = seeds.iter().map(|s| s.ff).collect();
        ReportEntry {
            label: label.into(),
            delta,
            energy,
            ablation,
            faa: Summary::of(&faas),
            ff: Summary::of(&ffs),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub kind: ReportKind,
    pub config: ExperimentConfig,
    pub mode: StreamMode,
    pub ff_advisory: bool,
    pub entries: Vec<ReportEntry>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub faa_spread: Option<f64>,
    pub wall_time_secs: f64,
}

impl Report {
    pub fn new(kind: ReportKind, config: ExperimentConfig, mode: StreamMode, entries: Vec<ReportEntry>) -> Self {
        let faa_spread = (kind == ReportKind::SweepDelta).then(|| {
            let means = entries.iter().map(|e| e.faa.mean);
            let max = means.clone().fold(f64::NEG_INFINITY, f64::max);
            let min = means.fold(f64::INFINITY, f64::min);
            if entries.is_empty() { 0.0 } else { max - min }
        });
        Report {
            schema: REPORT_SCHEMA.into(),
            kind,
            config,
            mode,
            ff_advisory: mode == StreamMode::Dil,
            entries,
            faa_spread,
            wall_time_secs: 0.0,
        }
    }

    pub fn entry(&self, label: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The serialized report with the wall-clock field zeroed, for byte comparisons.
    pub fn deterministic_json(&self) -> String {
        Report { wall_time_secs: 0.0, ..self.clone() }.to_json()
    }
}

fn invalid(path: &str, msg: &str) -> Error {
    Error::Config { field: path.to_string(), message: msg.to_string() }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| invalid(&format!("{path}.{key}"), "missing"))
}

fn number(obj: &Value, key: &str, path: &str) -> Result<f64> {
    field(obj, key, path)?.as_f64().ok_or_else(|| invalid(&format!("{path}.{key}"), "expected a number"))
}

fn fraction(obj: &Value, key: &str, path: &str) -> Result<f64> {
    let v = number(obj, key, path)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(&format!("{path}.{key}"), "expected a value in [0, 1]"));
    }
    Ok(v)
}

fn array<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    field(obj, key, path)?.as_array().ok_or_else(|| invalid(&format!("{path}.{key}"), "expected an array"))
}

fn check_summary(entry: &Value, key: &str, path: &str, values: &[f64]) -> Result<()> {
    let s = field(entry, key, path)?;
    let p = format!("{path}.{key}");
    let mean = number(s, "mean", &p)?;
    let std = number(s, "std", &p)?;
    let expected = Summary::of(values);
    if (mean - expected.mean).abs() > 1e-12 || (std - expected.std).abs() > 1e-12 {
        return Err(invalid(&p, "does not match the per-seed values"));
    }
    Ok(())
}

/// Checks a parsed report against the schema above, including the internal
/// consistency of summaries, matrix shape and the sweep spread.
pub fn validate_report(v: &Value) -> Result<()> {
    if field(v, "schema", "report")?.as_str() != Some(REPORT_SCHEMA) {
        return Err(invalid("report.schema", "unknown schema"));
    }
    let kind = field(v, "kind", "report")?
        .as_str()
        .filter(|k| ["run", "ablate", "sweep-delta"].contains(k))
        .ok_or_else(|| invalid("report.kind", "expected run, ablate or sweep-delta"))?;
    let config: ExperimentConfig = serde_json::from_value(field(v, "config", "report")?.clone())
        .map_err(|e| invalid("report.config", &e.to_string()))?;
    let mode: StreamMode = serde_json::from_value(field(v, "mode", "report")?.clone())
        .map_err(|e| invalid("report.mode", &e.to_string()))?;
    if field(v, "ff_advisory", "report")?.as_bool() != Some(mode == StreamMode::Dil) {
        return Err(invalid("report.ff_advisory", "must be true exactly for dil streams"));
    }
    let wall = number(v, "wall_time_secs", "report")?;
    if wall < 0.0 {
        return Err(invalid("report.wall_time_secs", "must be >= 0"));
    }

    let entries = array(v, "entries", "report")?;
    if entries.is_empty() {
        return Err(invalid("report.entries", "must not be empty"));
    }
    for (i, e) in entries.iter().enumerate() {
        let path = format!("report.entries[{i}]");
        field(e, "label", &path)?.as_str().ok_or_else(|| invalid(&format!("{path}.label"), "expected a string"))?;
        serde_json::from_value::<EnergyConfig>(field(e, "energy", &path)?.clone())
            .map_err(|err| invalid(&format!("{path}.energy"), &err.to_string()))?;
        serde_json::from_value::<AblationFlags>(field(e, "ablation", &path)?.clone())
            .map_err(|err| invalid(&format!("{path}.ablation"), &err.to_string()))?;
        if kind == "sweep-delta" {
            number(e, "delta", &path)?;
        }
        let seeds = array(e, "seeds", &path)?;
        if seeds.len() != config.seeds.len() {
            return Err(invalid(&format!("{path}.seeds"), "one result per configured seed expected"));
        }
        let mut faas = Vec::new();
        let mut ffs = Vec::new();
        for (j, s) in seeds.iter().enumerate() {
            let sp = format!("{path}.seeds[{j}]");
            let seed = field(s, "seed", &sp)?.as_u64().ok_or_else(|| invalid(&format!("{sp}.seed"), "expected an integer"))?;
            if seed != config.seeds[j] {
                return Err(invalid(&format!("{sp}.seed"), "seed order differs from config"));
            }
            faas.push(fraction(s, "faa", &sp)?);
            let ff = number(s, "ff", &sp)?;
            if !(-1.0..=1.0).contains(&ff) {
                return Err(invalid(&format!("{sp}.ff"), "expected a value in [-1, 1]"));
            }
            ffs.push(ff);
            fraction(s, "criterion3", &sp)?;
            let matrix = array(s, "matrix", &sp)?;
            for (r, row) in matrix.iter().enumerate() {
                let row = row.as_array().filter(|row| row.len() == r + 1).ok_or_else(|| {
                    invalid(&format!("{sp}.matrix[{r}]"), "row t must hold t entries")
                })?;
                if row.iter().any(|x| x.as_f64().is_none_or(|x| !(0.0..=1.0).contains(&x))) {
                    return Err(invalid(&format!("{sp}.matrix[{r}]"), "entries must be fractions"));
                }
            }
            let omega = array(s, "omega", &sp)?;
            if omega.iter().any(|t| t.as_f64().is_none_or(|t| !(t > 0.0))) {
                return Err(invalid(&format!("{sp}.omega"), "temperatures must be positive"));
            }
            if field(s, "omega_size", &sp)?.as_u64() != Some(omega.len() as u64) {
                return Err(invalid(&format!("{sp}.omega_size"), "must equal the length of omega"));
            }
            let fe = array(s, "train_free_energy", &sp)?;
            if fe.len() != matrix.len() || fe.iter().any(|x| x.as_f64().is_none()) {
                return Err(invalid(&format!("{sp}.train_free_energy"), "one number per stage expected"));
            }
        }
        check_summary(e, "faa", &path, &faas)?;
        check_summary(e, "ff", &path, &ffs)?;
    }

    match (kind, v.get("faa_spread")) {
        ("sweep-delta", Some(s)) => {
            let s = s.as_f64().ok_or_else(|| invalid("report.faa_spread", "expected a number"))?;
            if s < 0.0 {
                return Err(invalid("report.faa_spread", "must be >= 0"));
            }
        }
        ("sweep-delta", None) => return Err(invalid("report.faa_spread", "missing")),
        (_, Some(_)) => return Err(invalid("report.faa_spread", "only sweep reports carry a spread")),
        _ => {}
    }
    Ok(())
}
