//! Score-table summaries (per-script accuracy, average, range), the
//! auxiliary-head confusion report, and curve emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{Dataset, GridTaskSpec};
use crate::error::{Error, Result};
use crate::model::{HeadKind, MtlModel};
use crate::tasks::{derive_aux_label, AUX_CLASSES};
use crate::train::RunRecord;

#[derive(Debug, Clone)]
pub struct ScriptAccuracy {
    /// Per-script accuracy in percent; None for scripts absent from the data.
    pub per_script: Vec<Option<f64>>,
    pub overall: f64,
}

/// Script of a sample is its true label's row. Accuracy demands the full
/// label: digit-right-script-wrong counts as wrong.
pub fn accuracy_by_script(
    predictions: &[usize],
    labels: &[usize],
    spec: &GridTaskSpec,
) -> ScriptAccuracy {
    assert_eq!(predictions.len(), labels.len());
    let mut correct = vec![0usize; spec.rows];
    let mut total = vec![0usize; spec.rows];
    for (&p, &t) in predictions.iter().zip(labels) {
        let script = t / spec.cols;
        total[script] += 1;
        if p == t {
            correct[script] += 1;
        }
    }
    let per_script = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| (t > 0).then(|| 100.0 * c as f64 / t as f64))
        .collect();
    let n: usize = total.iter().sum();
    let c: usize = correct.iter().sum();
    ScriptAccuracy {
        per_script,
        overall: if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 },
    }
}

/// Arithmetic mean and max-minus-min of per-script accuracies.
pub fn summarize(per_script: &[f64]) -> (f64, f64) {
    assert!(!per_script.is_empty());
    let mean = per_script.iter().sum::<f64>() / per_script.len() as f64;
    let max = per_script.iter().cloned().fold(f64::MIN, f64::max);
    let min = per_script.iter().cloned().fold(f64::MAX, f64::min);
    (mean, max - min)
}

/// Round-half-up to 2 decimals, for table presentation.
pub fn round2(v: f64) -> f64 {
    (v * 100.0 + 0.5).floor() / 100.0
}

/// 4x4 confusion of aux-head prediction (rows) vs. the aux label realized
/// by the main head's prediction (columns).
pub fn aux_head_report(model: &MtlModel, dataset: &Dataset) -> Result<[[usize; 4]; 4]> {
    if !model.has_head(HeadKind::Aux) {
        return Err(Error::MissingHead { head: "aux" });
    }
    let mut confusion = [[0usize; AUX_CLASSES]; AUX_CLASSES];
    let n = dataset.len();
    let chunk = 256;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = crate::data::gather_batch(dataset, &indices);
        let (main_preds, aux_preds) = model.predict(&batch.images)?;
        let aux_preds = aux_preds.expect("aux head checked above");
        for ((&mp, &ap), &truth) in main_preds.iter().zip(&aux_preds).zip(&batch.labels) {
            let realized = derive_aux_label(mp, truth, dataset.spec.rows, dataset.spec.cols)?;
            confusion[ap][realized as usize] += 1;
        }
        start = end;
    }
    Ok(confusion)
}

pub fn emit_curves(record: &RunRecord, path: &Path) -> Result<()> {
    record.write_csv(path)
}

/// One row of the combined score table: a model's test metrics averaged
/// over repeats.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub model: String,
    pub per_script: Vec<Option<f64>>,
    pub average: Option<f64>,
    pub range: Option<f64>,
    pub overall: f64,
}

pub struct ScoreTable {
    pub script_names: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Aligned plain text; untrained-script cells print "-".
    pub fn render_text(&self) -> String {
        let fmt_cell = |v: Option<f64>| match v {
            Some(x) => format!("{:.2}", round2(x)),
            None => "-".to_string(),
        };
        let mut header: Vec<String> = vec!["Model".to_string()];
        if self.script_names.len() <= 3 {
            header.extend(self.script_names.iter().map(|n| format!("{} digits", n)));
            header.push("Average".into());
            header.push("Range".into());
        } else {
            header.push("Accuracy".into());
        }
        let mut body: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.model.clone()];
            if self.script_names.len() <= 3 {
                for i in 0..self.script_names.len() {
                    cells.push(fmt_cell(row.per_script.get(i).copied().flatten()));
                }
                cells.push(fmt_cell(row.average));
                cells.push(fmt_cell(row.range));
            } else {
                cells.push(fmt_cell(Some(row.overall)));
            }
            body.push(cells);
        }
        let cols = body[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| body.iter().map(|r| r[c].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for row in &body {
            for (c, cell) in row.iter().enumerate() {
                if c > 0 {
                    out.push_str("  ");
                }
                write!(out, "{:width$}", cell, width = widths[c]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let fmt_cell = |v: Option<f64>| v.map(|x| format!("{:.2}", round2(x))).unwrap_or_default();
        let mut out = String::from("model");
        for (i, _) in self.script_names.iter().enumerate() {
            write!(out, ",acc_script_{}", i).unwrap();
        }
        out.push_str(",average,range,overall\n");
        for row in &self.rows {
            out.push_str(&row.model);
            for i in 0..self.script_names.len() {
                write!(out, ",{}", fmt_cell(row.per_script.get(i).copied().flatten())).unwrap();
            }
            writeln!(
                out,
                ",{},{},{:.2}",
                fmt_cell(row.average),
                fmt_cell(row.range),
                round2(row.overall)
            )
            .unwrap();
        }
        out
    }
}

/// Average a run's per-repeat test rows into one score-table row.
pub fn score_row(record: &RunRecord) -> ScoreRow {
    let tests = record.test_rows();
    let n_cols = (record.config.spec.rows + record.config.script_col_offset).max(3);
    let mut sums = vec![(0.0f64, 0usize); n_cols];
    let mut overall = 0.0;
    for row in &tests {
        overall += row.metrics.acc_overall;
        for (i, acc) in row.metrics.acc_per_script.iter().enumerate() {
            if let Some(a) = acc {
                let slot = i + record.config.script_col_offset;
                sums[slot].0 += a;
                sums[slot].1 += 1;
            }
        }
    }
    let per_script: Vec<Option<f64>> = sums
        .iter()
        .map(|&(s, n)| (n > 0).then(|| s / n as f64))
        .collect();
    let present: Vec<f64> = per_script.iter().flatten().copied().collect();
    // Average and Range are only meaningful for models trained on every
    // script, mirroring the "-" cells of single-script rows.
    let full_coverage = present.len() == record.config.spec.rows
        && record.config.spec.rows + record.config.script_col_offset == n_cols
        && record.config.spec.rows > 1;
    let (average, range) = if full_coverage {
        let (a, r) = summarize(&present);
        (Some(a), Some(r))
    } else {
        (None, None)
    };
    ScoreRow {
        model: record.config.name.clone(),
        per_script,
        average,
        range,
        overall: overall / tests.len().max(1) as f64,
    }
}
