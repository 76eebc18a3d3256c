//! Final Average Accuracy and Final Forgetting.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower-triangular accuracy table: `rows[t][j]` is the accuracy on stage
/// `j + 1`'s test data after training stage `t + 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from complete lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next stage; it must cover every stage seen so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let expected = self.rows.len() + 1;
        if row.len() != expected {
            return Err(Error::contract(format!(
                "accuracy row {expected} needs {expected} entries, got {}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Accuracy on stage `data_stage` after stage `eval_stage` (both one-based).
    pub fn get(&self, eval_stage: usize, data_stage: usize) -> Option<f64> {
        if data_stage == 0 || data_stage > eval_stage {
            return None;
        }
        self.rows.get(eval_stage.checked_sub(1)?)?.get(data_stage - 1).copied()
    }

    /// Comma-separated table, one row per evaluation stage; empty cells above the diagonal.
    pub fn to_csv(&self) -> String {
        let s = self.rows.len();
        let mut out = String::from("after_stage");
        for j in 1..=s {
            out.push_str(&format!(",stage{j}"));
        }
        out.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            out.push_str(&(t + 1).to_string());
            for j in 0..s {
                out.push(',');
                if let Some(v) = row.get(j) {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of the final row.
pub fn faa(m: &AccuracyMatrix) -> Result<f64> {
    let last = m.rows.last().ok_or_else(|| Error::contract("accuracy matrix is empty"))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean over all but the last stage of best earlier accuracy minus final accuracy.
pub fn ff(m: &AccuracyMatrix) -> Result<f64> {
    let s = m.num_stages();
    if s == 0 {
        return Err(Error::contract("accuracy matrix is empty"));
    }
    if s == 1 {
        return Ok(0.0);
    }
    let last = &m.rows[s - 1];
    let total: f64 = (0..s - 1)
        .map(|j| {
            let best = (j..s - 1).map(|t| m.rows[t][j]).fold(f64::NEG_INFINITY, f64::max);
            best - last[j]
        })
        .sum();
    Ok(total / (s - 1) as f64)
}
