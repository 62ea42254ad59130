//! Within/between-class scatter and the variability ratio `nu`.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{ClassPartition, LayerView};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};

/// Class means and scatter matrices of one layer.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// `K x D`, row `y` is the mean of class `y`.
    pub class_means: DMatrix<f64>,
    /// The centre the between-class scatter is taken around.
    pub mean_of_means: DVector<f64>,
    pub sigma_w: SymMatrix,
    pub sigma_b: SymMatrix,
    pub class_sizes: Vec<usize>,
    /// `D x (K-1)` factor with `sigma_b = F * F^T`.
    between_factor: DMatrix<f64>,
}

impl ClassStats {
    pub fn n_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn between_factor(&self) -> &DMatrix<f64> {
        &self.between_factor
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Weighting {
    /// Every class contributes equally; centre is the mean of class means.
    PerClass,
    /// Every sample contributes equally; centre is the global mean.
    PerSample,
}

fn check_partition(view: &LayerView, part: &ClassPartition) -> Result<()> {
    if part.n_classes() < 2 {
        return Err(Error::TooFewClasses(part.n_classes()));
    }
    if let Some((y, _)) = part.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::EmptyClass { class: y });
    }
    if part.total() != view.n_rows() {
        return Err(Error::LengthMismatch(part.total(), view.n_rows()));
    }
    Ok(())
}

fn scatter(view: &LayerView, part: &ClassPartition, weighting: Weighting) -> Result<ClassStats> {
    check_partition(view, part)?;
    let k = part.n_classes();
    let d = view.dim();
    let n = view.n_rows();
    let mut class_means = DMatrix::zeros(k, d);
    let mut sw = DMatrix::zeros(d, d);
    for (y, rows) in part.iter() {
        let x = view.vectors.select_rows(rows.iter());
        let mu = x.row_mean();
        let centered = DMatrix::from_fn(x.nrows(), d, |i, j| x[(i, j)] - mu[j]);
        let s = centered.transpose() * &centered;
        let w = match weighting {
            Weighting::PerClass => 1.0 / (k as f64 * rows.len() as f64),
            Weighting::PerSample => 1.0 / n as f64,
        };
        sw += s * w;
        class_means.set_row(y as usize, &mu);
    }
    let centre: DVector<f64> = match weighting {
        Weighting::PerClass => class_means.row_mean().transpose(),
        Weighting::PerSample => view.vectors.row_mean().transpose(),
    };
    let scale = 1.0 / (k as f64).sqrt();
    let offsets = DMatrix::from_fn(d, k, |i, y| (class_means[(y, i)] - centre[i]) * scale);
    // The offsets cancel under these weights, so Sigma_b has a known null
    // direction. Dropping it exactly keeps the factor free of a structural zero
    // singular value.
    let weights: Vec<f64> = match weighting {
        Weighting::PerClass => vec![1.0; k],
        Weighting::PerSample => part.sizes().iter().map(|&s| s as f64).collect(),
    };
    let between_factor = offsets * linalg::complement_basis(&weights);
    let mut sb = DMatrix::zeros(d, d);
    for y in 0..k {
        let diff = DVector::from_fn(d, |i, _| class_means[(y, i)] - centre[i]);
        sb.ger(1.0 / k as f64, &diff, &diff, 1.0);
    }
    let sigma_b = SymMatrix::new(sb)?;
    Ok(ClassStats {
        class_means,
        mean_of_means: centre,
        sigma_w: SymMatrix::new(sw)?,
        sigma_b,
        class_sizes: part.sizes(),
        between_factor,
    })
}

/// Class statistics with per-class averaging (robust to class imbalance).
///
/// `Sigma_w = 1/K sum_y 1/|G_y| sum_{h in G_y} (h - m_y)(h - m_y)^T` and
/// `Sigma_b = 1/K sum_y (m_y - m)(m_y - m)^T` with `m` the unweighted mean of
/// the class means.
pub fn class_stats(view: &LayerView, part: &ClassPartition) -> Result<ClassStats> {
    scatter(view, part, Weighting::PerClass)
}

/// Class statistics in the original neural-collapse form: `Sigma_w` averages
/// over all samples and `Sigma_b` is centred on the global mean.
pub fn class_stats_strict(view: &LayerView, part: &ClassPartition) -> Result<ClassStats> {
    scatter(view, part, Weighting::PerSample)
}

/// `nu = trace(Sigma_w * pinv(Sigma_b)) / K`.
///
/// Returns 0 when `Sigma_w` vanishes and `+inf` when only `Sigma_b` does.
pub fn variability_ratio(stats: &ClassStats, rtol: f64) -> Result<f64> {
    if stats.sigma_w.is_zero() {
        return Ok(0.0);
    }
    if stats.between_factor.iter().all(|&v| v == 0.0) {
        return Ok(f64::INFINITY);
    }
    let sb_pinv = linalg::pinv_gram(&stats.between_factor, rtol)?;
    let t = linalg::trace_product(&stats.sigma_w, &sb_pinv)?;
    // trace of a product of two PSD matrices; clamp tiny negative roundoff
    Ok((t / stats.n_classes() as f64).max(0.0))
}

pub fn variability_ratio_strict(view: &LayerView, part: &ClassPartition, rtol: f64) -> Result<f64> {
    variability_ratio(&class_stats_strict(view, part)?, rtol)
}
