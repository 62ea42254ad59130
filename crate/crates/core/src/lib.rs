//! Layer-wise task-specialty analysis of labeled hidden-state dumps.
//!
//! The central quantity is the hidden-state variability ratio
//! `nu = trace(Sigma_w * pinv(Sigma_b)) / K`, computed per layer from
//! sequence-level states grouped by class. Lower values mean the layer already
//! separates the classes well. Alternative metrics (strict neural-collapse
//! ratio, numerical rank, regularized CCA, k-means mutual information), linear
//! probes, a layer-selection planner and synthetic robustness sweeps are built
//! on the same data model.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod probe;
pub mod seed;
pub mod strategy;

#[cfg(feature = "cli")]
pub mod cli;

mod par;

pub use dataset::{ClassPartition, HiddenStateDataset, LayerView, PoolingMode};
pub use error::{Error, ErrorKind, Result};
pub use metrics::{MetricCurve, MetricId};
pub use strategy::{StrategyCost, StrategyKind, StrategyTriple};
