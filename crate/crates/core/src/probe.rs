//! Cheap supervised heads on frozen layer states: LDA and an affine softmax
//! head trained by full-batch gradient descent, plus accuracy / F1 / MCC.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ClassPartition, HiddenStateDataset, LayerView, PoolingMode};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::metrics::{class_stats, MetricCurve};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Lda,
    Logreg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Acc,
    F1,
    Mcc,
}

macro_rules! str_enum {
    ($ty:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$var => $s),+ }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)+
                    other => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

str_enum!(HeadKind { Lda => "lda", Logreg => "logreg" });
str_enum!(ScoreKind { Acc => "acc", F1 => "f1", Mcc => "mcc" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub layer: usize,
    pub head_kind: HeadKind,
    pub score_kind: ScoreKind,
    pub score: f64,
    pub train_fraction: f64,
}

/// Gaussian LDA with a shared covariance.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub class_means: DMatrix<f64>,
    pub shared_covariance_pinv: SymMatrix,
    pub class_log_priors: Vec<f64>,
}

/// Fits LDA with the per-class-averaged within-class scatter as the shared
/// covariance and empirical class frequencies as priors.
pub fn lda_fit(view: &LayerView, part: &ClassPartition) -> Result<LdaModel> {
    let stats = class_stats(view, part)?;
    let d = view.dim();
    let k = part.n_classes();
    // Sigma_w = F F^T with one scaled centred column per sample.
    let mut factor = DMatrix::zeros(d, view.n_rows());
    let mut col = 0;
    for (y, rows) in part.iter() {
        let w = 1.0 / ((k * rows.len()) as f64).sqrt();
        for &i in rows {
            for j in 0..d {
                factor[(j, col)] = (view.vectors[(i, j)] - stats.class_means[(y as usize, j)]) * w;
            }
            col += 1;
        }
    }
    let n = view.n_rows() as f64;
    Ok(LdaModel {
        class_means: stats.class_means,
        shared_covariance_pinv: linalg::pinv_gram(&factor, linalg::default_rtol(d))?,
        class_log_priors: part.sizes().iter().map(|&s| (s as f64 / n).ln()).collect(),
    })
}

impl LdaModel {
    pub fn dim(&self) -> usize {
        self.class_means.ncols()
    }

    /// `x^T P m_y - m_y^T P m_y / 2 + log prior_y` for every class.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch(x.len(), self.dim()));
        }
        let p = self.shared_covariance_pinv.as_matrix();
        let xv = DVector::from_column_slice(x);
        Ok((0..self.class_means.nrows())
            .map(|y| {
                let m = self.class_means.row(y).transpose();
                let pm = p * &m;
                xv.dot(&pm) - 0.5 * m.dot(&pm) + self.class_log_priors[y]
            })
            .collect())
    }
}

fn argmax_lowest(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best as u32
}

pub fn lda_predict(model: &LdaModel, x: &[f64]) -> Result<u32> {
    Ok(argmax_lowest(&model.scores(x)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub train_fraction: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.1,
            epochs: 500,
            l2: 1e-4,
            train_fraction: 0.8,
        }
    }
}

/// Affine softmax head on standardized inputs.
#[derive(Debug, Clone)]
pub struct LogisticHead {
    /// `K x D`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Per-feature centre and scale taken from the training rows.
    pub feature_mean: DVector<f64>,
    pub feature_scale: DVector<f64>,
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2` and its gradient in `(W, b)`.
///
/// `x` holds one sample per row, already in the head's input space.
pub fn softmax_loss_and_grad(
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
    x: &DMatrix<f64>,
    labels: &[u32],
    l2: f64,
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let k = weights.nrows();
    let mut logits = x * weights.transpose();
    let mut loss = 0.0;
    for i in 0..x.nrows() {
        let mut row = logits.row_mut(i);
        row += bias.transpose();
        let max = row.max();
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        loss -= row[labels[i] as usize] - log_z;
        for c in 0..k {
            row[c] = (row[c] - log_z).exp();
        }
        row[labels[i] as usize] -= 1.0;
    }
    // logits now holds P - Y
    let gw = logits.transpose() * x / n + weights * l2;
    let gb = logits.row_sum().transpose() / n;
    let loss = loss / n + 0.5 * l2 * weights.norm_squared();
    (loss, gw, gb)
}

impl LogisticHead {
    fn standardize(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.feature_mean[j]) / self.feature_scale[j]
        })
    }

    pub fn predict_rows(&self, x: &DMatrix<f64>) -> Vec<u32> {
        let logits = self.standardize(x) * self.weights.transpose();
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = (0..self.bias.len()).map(|c| logits[(i, c)] + self.bias[c]).collect();
                argmax_lowest(&row)
            })
            .collect()
    }
}

/// Full-batch gradient descent from zero weights.
pub fn logreg_train(view: &LayerView, train: &[usize], cfg: &LogRegConfig) -> Result<LogisticHead> {
    if view.n_classes < 2 {
        return Err(Error::TooFewClasses(view.n_classes));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = view.vectors.select_rows(train.iter());
    let labels: Vec<u32> = train.iter().map(|&i| view.labels[i]).collect();
    let d = x.ncols();
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let scale = DVector::from_fn(d, |j, _| {
        let var = x.column(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        if var > 0.0 {
            var.sqrt()
        } else {
            1.0
        }
    });
    let mut head = LogisticHead {
        weights: DMatrix::zeros(view.n_classes, d),
        bias: DVector::zeros(view.n_classes),
        feature_mean: mean,
        feature_scale: scale,
    };
    let xs = head.standardize(&x);
    for epoch in 0..cfg.epochs {
        let (loss, gw, gb) = softmax_loss_and_grad(&head.weights, &head.bias, &xs, &labels, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        head.weights -= gw * cfg.lr;
        head.bias -= gb * cfg.lr;
    }
    let (loss, _, _) = softmax_loss_and_grad(&head.weights, &head.bias, &xs, &labels, cfg.l2);
    if !loss.is_finite() || head.weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    Ok(head)
}

/// Train/test row indices. Each list is ordered by content hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Stratified split keyed by per-row content hashes: within each class the
    /// rows with the smallest hashes go to training. Every class with at least
    /// two members keeps one row for testing.
    pub fn from_hashes(hashes: &[u64], labels: &[u32], n_classes: usize, train_fraction: f64) -> Self {
        let mut by_class: Vec<Vec<(u64, usize)>> = vec![Vec::new(); n_classes];
        for (i, (&h, &y)) in hashes.iter().zip(labels).enumerate() {
            by_class[y as usize].push((h, i));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut rows in by_class {
            rows.sort_unstable();
            let n = rows.len();
            let mut n_train = (train_fraction * n as f64).ceil() as usize;
            if n >= 2 {
                n_train = n_train.clamp(1, n - 1);
            } else {
                n_train = n;
            }
            train.extend(rows[..n_train].iter().copied());
            test.extend(rows[n_train..].iter().copied());
        }
        train.sort_unstable();
        test.sort_unstable();
        Split {
            train: train.into_iter().map(|(_, i)| i).collect(),
            test: test.into_iter().map(|(_, i)| i).collect(),
        }
    }

    /// Split shared by every layer of a dataset.
    pub fn for_dataset(ds: &HiddenStateDataset, seed: u64, train_fraction: f64) -> Self {
        let hashes: Vec<u64> = (0..ds.n_sequences())
            .map(|i| {
                let bytes = ds.sequence_payload(i).iter().flat_map(|v| v.to_le_bytes());
                content_hash(seed, ds.labels()[i], bytes)
            })
            .collect();
        Split::from_hashes(&hashes, ds.labels(), ds.n_classes(), train_fraction)
    }

    pub fn for_view(view: &LayerView, seed: u64, train_fraction: f64) -> Self {
        let hashes: Vec<u64> = (0..view.n_rows())
            .map(|i| {
                let bytes = view.vectors.row(i).iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>();
                content_hash(seed, view.labels[i], bytes)
            })
            .collect();
        Split::from_hashes(&hashes, &view.labels, view.n_classes, train_fraction)
    }
}

fn content_hash(seed: u64, label: u32, bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.to_le_bytes());
    let buf: Vec<u8> = bytes.into_iter().collect();
    h.update(&buf);
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

/// Accuracy, binary F1 (positive class 1) or Matthews correlation.
///
/// MCC uses the multiclass generalization, which reduces to the usual binary
/// formula; a zero denominator yields 0. F1 is 0 when there are no true or
/// predicted positives.
pub fn score(predictions: &[u32], labels: &[u32], kind: ScoreKind) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = labels.len();
    match kind {
        ScoreKind::Acc => {
            Ok(predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n as f64)
        }
        ScoreKind::F1 => {
            if let Some(&bad) = labels.iter().chain(predictions).find(|&&v| v > 1) {
                return Err(Error::LabelArity { score: "f1", label: bad });
            }
            let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
            for (&p, &y) in predictions.iter().zip(labels) {
                match (p, y) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fneg += 1,
                    _ => {}
                }
            }
            let denom = 2 * tp + fp + fneg;
            Ok(if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 })
        }
        ScoreKind::Mcc => {
            let k = labels.iter().chain(predictions).max().map_or(0, |&m| m as usize + 1);
            let mut t = vec![0f64; k];
            let mut p = vec![0f64; k];
            let mut correct = 0f64;
            for (&pr, &y) in predictions.iter().zip(labels) {
                t[y as usize] += 1.0;
                p[pr as usize] += 1.0;
                if pr == y {
                    correct += 1.0;
                }
            }
            let s = n as f64;
            let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
            let pp: f64 = p.iter().map(|a| a * a).sum();
            let tt: f64 = t.iter().map(|a| a * a).sum();
            let denom = ((s * s - pp) * (s * s - tt)).sqrt();
            Ok(if denom == 0.0 { 0.0 } else { ((correct * s - pt) / denom).clamp(-1.0, 1.0) })
        }
    }
}

/// Fits `head` on the training rows of one view and scores the test rows.
pub fn probe_layer(
    view: &LayerView,
    split: &Split,
    head: HeadKind,
    score_kind: ScoreKind,
    cfg: &LogRegConfig,
) -> Result<ProbeResult> {
    if split.test.is_empty() {
        return Err(Error::InvalidDataset("held-out split is empty".into()));
    }
    let test_x = view.vectors.select_rows(split.test.iter());
    let test_y: Vec<u32> = split.test.iter().map(|&i| view.labels[i]).collect();
    let predictions = match head {
        HeadKind::Lda => {
            let train = view.select_rows(&split.train);
            let model = lda_fit(&train, &train.group_by_label()?)?;
            (0..test_x.nrows())
                .map(|i| {
                    let row: Vec<f64> = test_x.row(i).iter().copied().collect();
                    lda_predict(&model, &row)
                })
                .collect::<Result<Vec<_>>>()?
        }
        HeadKind::Logreg => {
            if view.n_rows() < 10 {
                return Err(Error::InvalidDataset(
                    "logistic probe needs at least 10 sequences".into(),
                ));
            }
            logreg_train(view, &split.train, cfg)?.predict_rows(&test_x)
        }
    };
    Ok(ProbeResult {
        layer: view.layer_index,
        head_kind: head,
        score_kind,
        score: score(&predictions, &test_y, score_kind)?,
        train_fraction: cfg.train_fraction,
    })
}

/// Per-layer probe scores on one shared content-hash split.
pub fn probe_curve(
    ds: &HiddenStateDataset,
    head: HeadKind,
    score_kind: ScoreKind,
    pooling: PoolingMode,
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<MetricCurve> {
    Ok(MetricCurve::new(
        probe_results(ds, head, score_kind, pooling, seed, cfg)?
            .into_iter()
            .map(|r| r.score)
            .collect(),
    ))
}

pub fn probe_results(
    ds: &HiddenStateDataset,
    head: HeadKind,
    score_kind: ScoreKind,
    pooling: PoolingMode,
    seed: u64,
    cfg: &LogRegConfig,
) -> Result<Vec<ProbeResult>> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} outside (0, 1)",
            cfg.train_fraction
        )));
    }
    let split = Split::for_dataset(ds, seed, cfg.train_fraction);
    par::map_indexed(ds.n_layers(), |l| {
        let layer = l + 1;
        ds.pool_sequences(layer, pooling)
            .and_then(|v| probe_layer(&v, &split, head, score_kind, cfg))
            .map_err(|e| Error::at_layer(layer, e))
    })
    .into_iter()
    .collect()
}
