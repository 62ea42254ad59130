//! Regularized canonical correlation between hidden states and one-hot labels.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassPartition, LayerView};
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

pub const DEFAULT_GRID: [f64; 4] = [1e-6, 1e-4, 1e-2, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaOptions {
    /// Candidate values for both diagonal perturbations.
    pub grid: Vec<f64>,
    pub folds: usize,
    pub repeats: usize,
    /// Skip cross-validation and score the full view with these `(eps_h, eps_y)`.
    pub fixed: Option<(f64, f64)>,
}

impl Default for CcaOptions {
    fn default() -> Self {
        CcaOptions {
            grid: DEFAULT_GRID.to_vec(),
            folds: 10,
            repeats: 3,
            fixed: None,
        }
    }
}

/// Projections fitted on one sample.
#[derive(Debug, Clone)]
pub struct CcaFit {
    mean_h: DVector<f64>,
    mean_y: DVector<f64>,
    proj_h: DMatrix<f64>,
    proj_y: DMatrix<f64>,
    /// Canonical correlations on the fitting sample, descending, clipped to [0, 1].
    pub correlations: Vec<f64>,
}

pub(crate) fn one_hot(labels: &[u32], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(labels.len(), k, |i, j| if labels[i] as usize == j { 1.0 } else { 0.0 })
}

fn is_one_hot(y: &DMatrix<f64>) -> bool {
    y.row_iter().all(|r| {
        r.iter().all(|&v| v == 0.0 || v == 1.0) && r.iter().filter(|&&v| v == 1.0).count() == 1
    })
}

fn centered(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mu = m.row_mean().transpose();
    let c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mu[j]);
    (c, mu)
}

impl CcaFit {
    pub fn fit(h: &DMatrix<f64>, y: &DMatrix<f64>, eps_h: f64, eps_y: f64) -> Result<Self> {
        if h.nrows() != y.nrows() {
            return Err(Error::LengthMismatch(h.nrows(), y.nrows()));
        }
        let n = h.nrows() as f64;
        let (hc, mean_h) = centered(h);
        let (yc, mean_y) = centered(y);
        // Centred one-hot rows sum to zero, so Cyy and Chy share the null
        // vector 1. Rotating it out first leaves the nonzero correlations
        // unchanged and keeps the SVD input free of that exact zero.
        let k = y.ncols();
        let basis = if is_one_hot(y) && k >= 2 {
            linalg::complement_basis(&vec![1.0; k])
        } else {
            DMatrix::identity(k, k)
        };
        let yc = yc * &basis;
        let mut chh = hc.transpose() * &hc / n;
        let mut cyy = yc.transpose() * &yc / n;
        let chy = hc.transpose() * &yc / n;
        for i in 0..chh.nrows() {
            chh[(i, i)] += eps_h;
        }
        for i in 0..cyy.nrows() {
            cyy[(i, i)] += eps_y;
        }
        let wh = linalg::inv_sqrt_spd(&chh)?;
        let wy = linalg::inv_sqrt_spd(&cyy)?;
        let t = &wh * chy * &wy;
        let (u, sv, v) = linalg::checked_svd(&t)?;
        let j = h.ncols().min(k);
        let mut order: Vec<usize> = (0..sv.len()).collect();
        order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
        order.truncate(j);
        let u = u.select_columns(order.iter());
        let v = v.select_columns(order.iter());
        let mut correlations: Vec<f64> = order.iter().map(|&i| sv[i].clamp(0.0, 1.0)).collect();
        // the rotated-out direction carries no correlation
        correlations.resize(j, 0.0);
        let (mut proj_h, mut proj_y) = (wh * u, basis * (wy * v));
        if proj_h.ncols() < j {
            proj_h = proj_h.resize_horizontally(j, 0.0);
            proj_y = proj_y.resize_horizontally(j, 0.0);
        }
        Ok(CcaFit {
            mean_h,
            mean_y,
            proj_h,
            proj_y,
            correlations,
        })
    }

    /// Correlations of the fitted projections on another sample, clipped to [0, 1].
    pub fn evaluate(&self, h: &DMatrix<f64>, y: &DMatrix<f64>) -> Vec<f64> {
        let ph = project(h, &self.mean_h, &self.proj_h);
        let py = project(y, &self.mean_y, &self.proj_y);
        (0..ph.ncols())
            .map(|j| {
                let a: Vec<f64> = ph.column(j).iter().copied().collect();
                let b: Vec<f64> = py.column(j).iter().copied().collect();
                linalg::pearson(&a, &b).map_or(0.0, |r| r.clamp(0.0, 1.0))
            })
            .collect()
    }
}

fn project(m: &DMatrix<f64>, mean: &DVector<f64>, proj: &DMatrix<f64>) -> DMatrix<f64> {
    let c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j]);
    c * proj
}

/// Mean of all but the last of `J = min(D, K)` correlations.
fn leading_mean(corrs: &[f64]) -> Result<f64> {
    if corrs.len() < 2 {
        return Err(Error::InvalidArgument(
            "CCA score needs min(D, K) >= 2 canonical directions".into(),
        ));
    }
    let head = &corrs[..corrs.len() - 1];
    Ok(head.iter().sum::<f64>() / head.len() as f64)
}

fn check(view: &LayerView, part: &ClassPartition) -> Result<()> {
    if part.n_classes() < 2 {
        return Err(Error::TooFewClasses(part.n_classes()));
    }
    if let Some((y, _)) = part.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::EmptyClass { class: y });
    }
    if view.dim() < 2 {
        return Err(Error::InvalidArgument("CCA score needs D >= 2".into()));
    }
    Ok(())
}

/// CCA score of the whole view with fixed regularization.
pub fn cca_score(view: &LayerView, part: &ClassPartition, eps_h: f64, eps_y: f64) -> Result<f64> {
    check(view, part)?;
    let y = one_hot(&view.labels, part.n_classes());
    let fit = CcaFit::fit(&view.vectors, &y, eps_h, eps_y)?;
    leading_mean(&fit.correlations)
}

/// Class-balanced sample: `min |G_y|` rows from every class, shuffled.
pub(crate) fn balanced_sample(part: &ClassPartition, seed: u64, purpose: &str) -> Vec<usize> {
    let m = part.sizes().into_iter().min().unwrap_or(0);
    let mut rng = seed::rng_for(seed, purpose);
    let mut out = Vec::with_capacity(m * part.n_classes());
    for (_, rows) in part.iter() {
        let mut rows = rows.to_vec();
        rows.shuffle(&mut rng);
        out.extend_from_slice(&rows[..m]);
    }
    out.shuffle(&mut rng);
    out
}

/// Cross-validated CCA score.
///
/// Each repeat shuffles a class-balanced sample into `folds` folds, fits every
/// grid pair on `folds - 2` of them, picks the pair with the best development
/// score on one held-out fold, and reports that pair's score on the last fold.
/// Returns the mean test score over repeats.
pub fn cca_cv(view: &LayerView, part: &ClassPartition, opts: &CcaOptions, seed: u64) -> Result<f64> {
    check(view, part)?;
    if opts.folds < 3 || opts.repeats == 0 || opts.grid.is_empty() {
        return Err(Error::InvalidArgument(
            "CCA cross-validation needs folds >= 3, repeats >= 1 and a nonempty grid".into(),
        ));
    }
    let sample = balanced_sample(part, seed, "cca/balance");
    if sample.len() < 10 * opts.folds {
        return Err(Error::InvalidDataset(format!(
            "CCA cross-validation needs at least {} class-balanced rows, have {}",
            10 * opts.folds,
            sample.len()
        )));
    }
    let k = part.n_classes();
    let mut total = 0.0;
    for r in 0..opts.repeats {
        let mut idx = sample.clone();
        idx.shuffle(&mut seed::rng_for(seed, &format!("cca/repeat{r}")));
        let fold_of = |pos: usize| pos % opts.folds;
        let pick = |f: &dyn Fn(usize) -> bool| -> Vec<usize> {
            idx.iter()
                .enumerate()
                .filter(|(p, _)| f(fold_of(*p)))
                .map(|(_, &i)| i)
                .collect()
        };
        let test = pick(&|f| f == opts.folds - 1);
        let dev = pick(&|f| f == opts.folds - 2);
        let train = pick(&|f| f < opts.folds - 2);
        let sub = |rows: &[usize]| {
            let v = view.select_rows(rows);
            let y = one_hot(&v.labels, k);
            (v.vectors, y)
        };
        let (htr, ytr) = sub(&train);
        let (hdev, ydev) = sub(&dev);
        let (hte, yte) = sub(&test);
        let mut best: Option<(f64, CcaFit)> = None;
        for &eh in &opts.grid {
            for &ey in &opts.grid {
                let fit = CcaFit::fit(&htr, &ytr, eh, ey)?;
                let score = leading_mean(&fit.evaluate(&hdev, &ydev))?;
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, fit));
                }
            }
        }
        let (_, fit) = best.expect("grid is nonempty");
        total += leading_mean(&fit.evaluate(&hte, &yte))?;
    }
    Ok(total / opts.repeats as f64)
}
