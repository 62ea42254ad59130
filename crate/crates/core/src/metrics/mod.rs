//! Layer-wise task-specialty metrics.

pub mod cca;
pub mod mi;
pub mod rank;
pub mod scatter;
pub mod smoothness;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cca::{cca_cv, cca_score, CcaOptions};
pub use mi::{mi_kmeans, mutual_information};
pub use rank::{effective_rank, rank_metric, rank_per_class};
pub use scatter::{
    class_stats, class_stats_strict, variability_ratio, variability_ratio_strict, ClassStats,
};
pub use smoothness::smoothness_zeta;

use crate::dataset::{HiddenStateDataset, LayerView, PoolingMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

/// One value per layer, layer `i + 1` at index `i`. Values are finite or `+inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    values: Vec<f64>,
}

impl MetricCurve {
    /// # Panics
    /// If a value is NaN or `-inf`.
    pub fn new(values: Vec<f64>) -> Self {
        assert!(
            values.iter().all(|v| v.is_finite() || *v == f64::INFINITY),
            "metric curves hold finite values or +inf"
        );
        MetricCurve { values }
    }

    pub fn try_new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() || *v == f64::INFINITY)) {
            return Err(Error::Numerical(format!(
                "layer {}: metric value {} is not finite",
                i + 1,
                values[i]
            )));
        }
        Ok(MetricCurve { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1-based layer indices.
    pub fn layers(&self) -> impl Iterator<Item = usize> {
        1..=self.values.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "nu")]
    Nu,
    #[serde(rename = "nu-strict")]
    NuStrict,
    #[serde(rename = "rank")]
    Rank,
    #[serde(rename = "cca")]
    Cca,
    #[serde(rename = "mi")]
    Mi,
}

impl MetricId {
    pub const ALL: [MetricId; 5] = [
        MetricId::Nu,
        MetricId::NuStrict,
        MetricId::Rank,
        MetricId::Cca,
        MetricId::Mi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Nu => "nu",
            MetricId::NuStrict => "nu-strict",
            MetricId::Rank => "rank",
            MetricId::Cca => "cca",
            MetricId::Mi => "mi",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown metric {s:?} (expected nu, nu-strict, rank, cca or mi)"
                ))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    /// Relative pseudo-inverse cutoff; `None` uses `D * eps`.
    pub rtol: Option<f64>,
    pub cca: CcaOptions,
    /// k-means cluster count; `None` uses the number of classes.
    pub mi_clusters: Option<usize>,
    pub seed: u64,
}

/// Evaluates one metric on a single layer view.
pub fn layer_metric(view: &LayerView, metric: MetricId, opts: &CurveOptions) -> Result<f64> {
    let part = view.group_by_label()?;
    let rtol = opts.rtol.unwrap_or_else(|| linalg::default_rtol(view.dim()));
    match metric {
        MetricId::Nu => variability_ratio(&class_stats(view, &part)?, rtol),
        MetricId::NuStrict => variability_ratio_strict(view, &part, rtol),
        MetricId::Rank => rank_metric(view, &part),
        MetricId::Cca => match opts.cca.fixed {
            Some((eh, ey)) => cca_score(view, &part, eh, ey),
            None => cca_cv(view, &part, &opts.cca, opts.seed),
        },
        MetricId::Mi => {
            let c = opts.mi_clusters.unwrap_or(part.n_classes());
            mi_kmeans(view, &part, c, opts.seed)
        }
    }
}

/// Pools every layer and evaluates `metric` on each, in parallel when enabled.
///
/// Every layer uses the same seed, so sampled metrics see the same rows on
/// every layer.
pub fn curve(
    ds: &HiddenStateDataset,
    metric: MetricId,
    pooling: PoolingMode,
    opts: &CurveOptions,
) -> Result<MetricCurve> {
    let values = par::map_indexed(ds.n_layers(), |l| {
        let layer = l + 1;
        ds.pool_sequences(layer, pooling)
            .and_then(|v| layer_metric(&v, metric, opts))
            .map_err(|e| Error::at_layer(layer, e))
    });
    MetricCurve::try_new(values.into_iter().collect::<Result<Vec<_>>>()?)
}
