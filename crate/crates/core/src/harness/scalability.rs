use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Cross-task generalization scores. Row `i` is the policy trained on
/// `rows[i]`, column `j` the task it was evaluated on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Mean evaluation returns, `raw[i][j]`.
    pub raw: Vec<Vec<f64>>,
    /// `raw` normalized per column, see [`normalize_columns`].
    pub scores: Vec<Vec<f64>>,
}

/// Divides each column by its maximum. Returns can be negative in Gather,
/// so a column whose minimum is below zero is first shifted by that
/// minimum; for nonnegative columns this is plain division by the maximum.
/// A column whose entries are all equal becomes all ones.
pub fn normalize_columns(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n_cols = raw.first().map_or(0, Vec::len);
    let mut out = raw.to_vec();
    for j in 0..n_cols {
        let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shift = col.iter().copied().fold(0.0, f64::min);
        let span = max - shift;
        for (i, &v) in col.iter().enumerate() {
            out[i][j] = if span > 0.0 { (v - shift) / span } else { 1.0 };
        }
    }
    out
}

impl ScalabilityMatrix {
    pub fn new(rows: Vec<String>, cols: Vec<String>, raw: Vec<Vec<f64>>) -> Result<Self, HarnessError> {
        if raw.len() != rows.len() || raw.iter().any(|r| r.len() != cols.len()) {
            return Err(HarnessError::config("matrix shape does not match its labels"));
        }
        let scores = normalize_columns(&raw);
        Ok(Self { rows, cols, raw, scores })
    }

    /// CSV with a `trained_on` label column followed by one column per
    /// evaluation task.
    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io(e.to_string()))?;
        let io = |e: csv::Error| HarnessError::Io(e.to_string());
        let mut header = vec!["trained_on".to_string()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header).map_err(io)?;
        for (label, row) in self.rows.iter().zip(&self.scores) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>), HarnessError> {
        let io = |e: csv::Error| HarnessError::Io(e.to_string());
        let mut r = csv::Reader::from_path(path).map_err(io)?;
        let cols: Vec<String> = r.headers().map_err(io)?.iter().skip(1).map(str::to_string).collect();
        let (mut rows, mut values) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(io)?;
            rows.push(rec.get(0).unwrap_or_default().to_string());
            values.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.parse::<f64>().map_err(|e| HarnessError::Io(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Ok((rows, cols, values))
    }
}
