//! Label algebra for grid-factored tasks: compose/decompose labels,
//! derive the 4-class auxiliary labels from main-head predictions, and
//! compute the per-batch factor that scales the main loss.

use crate::error::{Error, Result};
use crate::tensor::{argmax_rows, Tensor};

/// Correctness code for one prediction: 0 = neither component right,
/// 1 = column (digit) only, 2 = row (script) only, 3 = both.
pub type AuxLabel = u8;

pub const AUX_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    /// 1 + raw_sum / (3B), bounded to [1, 2]. The default.
    Normalized,
    /// raw_sum / (3B), bounded to [0, 1].
    Mean,
    /// The literal batch sum of aux labels.
    RawSum,
}

impl FactorMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(FactorMode::Normalized),
            "mean" => Ok(FactorMode::Mean),
            "raw_sum" => Ok(FactorMode::RawSum),
            other => Err(Error::Config(format!(
                "unknown factor mode `{}` (expected normalized, mean, or raw_sum)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorMode::Normalized => "normalized",
            FactorMode::Mean => "mean",
            FactorMode::RawSum => "raw_sum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorStat {
    pub raw_sum: u64,
    pub factor: f64,
}

pub fn decompose_label(label: usize, rows: usize, cols: usize) -> Result<(usize, usize)> {
    if label >= rows * cols {
        return Err(Error::LabelOutOfRange {
            label,
            classes: rows * cols,
            index: 0,
        });
    }
    Ok((label / cols, label % cols))
}

pub fn compose_label(row: usize, col: usize, rows: usize, cols: usize) -> Result<usize> {
    if row >= rows || col >= cols {
        return Err(Error::LabelOutOfRange {
            label: row * cols + col,
            classes: rows * cols,
            index: 0,
        });
    }
    Ok(row * cols + col)
}

pub fn derive_aux_label(
    predicted: usize,
    truth: usize,
    rows: usize,
    cols: usize,
) -> Result<AuxLabel> {
    let (pr, pc) = decompose_label(predicted, rows, cols)?;
    let (tr, tc) = decompose_label(truth, rows, cols)?;
    Ok(match (pr == tr, pc == tc) {
        (false, false) => 0,
        (false, true) => 1,
        (true, false) => 2,
        (true, true) => 3,
    })
}

/// Aux targets for a batch, derived from the main head's argmax. These are
/// constants with respect to differentiation: no gradient flows through.
pub fn batch_aux_labels(
    main_logits: &Tensor,
    true_labels: &[usize],
    rows: usize,
    cols: usize,
) -> Result<Vec<AuxLabel>> {
    let preds = argmax_rows(main_logits);
    preds
        .iter()
        .zip(true_labels)
        .map(|(&p, &t)| derive_aux_label(p, t, rows, cols))
        .collect()
}

pub fn compute_factor(aux_labels: &[AuxLabel], mode: FactorMode) -> Result<FactorStat> {
    if aux_labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let raw_sum: u64 = aux_labels.iter().map(|&a| a as u64).sum();
    let b = aux_labels.len() as f64;
    let factor = match mode {
        FactorMode::Normalized => 1.0 + raw_sum as f64 / (3.0 * b),
        FactorMode::Mean => raw_sum as f64 / (3.0 * b),
        FactorMode::RawSum => raw_sum as f64,
    };
    Ok(FactorStat { raw_sum, factor })
}
