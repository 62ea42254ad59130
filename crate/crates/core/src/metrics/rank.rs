//! Numerical-rank metric: squared nuclear norm over squared Frobenius norm.

use crate::dataset::{ClassPartition, LayerView};
use crate::error::{Error, Result};
use crate::linalg;
use nalgebra::DMatrix;

/// `(sum s)^2 / (sum s^2)` over the singular values of `m`; 0 for a zero matrix.
pub fn effective_rank(m: &DMatrix<f64>) -> f64 {
    let s = linalg::singular_values(m);
    let sum: f64 = s.iter().sum();
    let sum_sq: f64 = s.iter().map(|v| v * v).sum();
    if sum_sq == 0.0 {
        0.0
    } else {
        sum * sum / sum_sq
    }
}

/// Per-class effective rank, ascending class order.
pub fn rank_per_class(view: &LayerView, part: &ClassPartition) -> Result<Vec<f64>> {
    part.iter()
        .map(|(y, rows)| {
            if rows.is_empty() {
                return Err(Error::EmptyClass { class: y });
            }
            Ok(effective_rank(&view.vectors.select_rows(rows.iter())))
        })
        .collect()
}

pub fn rank_metric(view: &LayerView, part: &ClassPartition) -> Result<f64> {
    let per = rank_per_class(view, part)?;
    if per.is_empty() {
        return Err(Error::TooFewClasses(0));
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}
