//! In-memory model for labeled hidden-state dumps.
//!
//! Layers are 1-based at every public boundary (`layer` arguments, report
//! rows) and 0-based in storage offsets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// How token-level states are reduced to one vector per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// Mean over the non-CLS, non-padding tokens.
    Mean,
    /// The state at token position 0.
    Cls,
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Cls => "cls",
        })
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(PoolingMode::Mean),
            "cls" => Ok(PoolingMode::Cls),
            other => Err(Error::InvalidArgument(format!(
                "unknown pooling mode {other:?} (expected mean or cls)"
            ))),
        }
    }
}

/// Token-level states of one sequence.
///
/// `states` holds `(n_tokens + 1) * n_layers * dim` values, token-major then
/// layer. Token 0 is CLS. A nonzero `padding` byte marks a padded position,
/// which MEAN pooling skips.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub n_tokens: usize,
    pub states: Vec<f32>,
    pub padding: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    /// `data` holds `n_sequences * n_layers * dim` values, sequence-major then
    /// layer. `pooling` records how the rows were produced, when known.
    Pooled {
        data: Vec<f32>,
        pooling: Option<PoolingMode>,
    },
    Tokens { sequences: Vec<TokenSequence> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateDataset {
    n_layers: usize,
    dim: usize,
    n_classes: usize,
    labels: Vec<u32>,
    storage: Storage,
    label_names: Option<Vec<String>>,
}

impl HiddenStateDataset {
    pub fn pooled(
        n_layers: usize,
        dim: usize,
        n_classes: usize,
        labels: Vec<u32>,
        data: Vec<f32>,
        pooling: Option<PoolingMode>,
    ) -> Result<Self> {
        let ds = HiddenStateDataset {
            n_layers,
            dim,
            n_classes,
            labels,
            storage: Storage::Pooled { data, pooling },
            label_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn tokens(
        n_layers: usize,
        dim: usize,
        n_classes: usize,
        labels: Vec<u32>,
        sequences: Vec<TokenSequence>,
    ) -> Result<Self> {
        let ds = HiddenStateDataset {
            n_layers,
            dim,
            n_classes,
            labels,
            storage: Storage::Tokens { sequences },
            label_names: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_label_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::InvalidDataset(format!(
                "{} label names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.label_names = Some(names);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.dim == 0 || self.n_classes == 0 {
            return Err(Error::InvalidDataset(
                "n_layers, dim and n_classes must be at least 1".into(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y as usize >= self.n_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside 0..{}",
                self.n_classes
            )));
        }
        let per_token = self.n_layers * self.dim;
        match &self.storage {
            Storage::Pooled { data, .. } => {
                if data.len() != self.labels.len() * per_token {
                    return Err(Error::InvalidDataset(format!(
                        "pooled storage has {} values, expected {}",
                        data.len(),
                        self.labels.len() * per_token
                    )));
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDataset("non-finite state value".into()));
                }
            }
            Storage::Tokens { sequences } => {
                if sequences.len() != self.labels.len() {
                    return Err(Error::InvalidDataset(format!(
                        "{} token sequences for {} labels",
                        sequences.len(),
                        self.labels.len()
                    )));
                }
                let masked = sequences.first().map(|s| s.padding.is_some());
                for (n, seq) in sequences.iter().enumerate() {
                    if seq.states.len() != (seq.n_tokens + 1) * per_token {
                        return Err(Error::InvalidDataset(format!(
                            "sequence {n} has {} values, expected {}",
                            seq.states.len(),
                            (seq.n_tokens + 1) * per_token
                        )));
                    }
                    if Some(seq.padding.is_some()) != masked {
                        return Err(Error::InvalidDataset(
                            "padding mask must be present on all sequences or none".into(),
                        ));
                    }
                    if let Some(mask) = &seq.padding {
                        if mask.len() != seq.n_tokens + 1 {
                            return Err(Error::InvalidDataset(format!(
                                "sequence {n} padding mask has {} entries, expected {}",
                                mask.len(),
                                seq.n_tokens + 1
                            )));
                        }
                    }
                    if seq.states.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidDataset(format!(
                            "non-finite state value in sequence {n}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_sequences(&self) -> usize {
        self.labels.len()
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn label_names(&self) -> Option<&[String]> {
        self.label_names.as_deref()
    }

    pub fn is_token_level(&self) -> bool {
        matches!(self.storage, Storage::Tokens { .. })
    }

    pub fn has_padding_mask(&self) -> bool {
        match &self.storage {
            Storage::Tokens { sequences } => sequences.first().is_some_and(|s| s.padding.is_some()),
            Storage::Pooled { .. } => false,
        }
    }

    /// Count of members per class id, ascending.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y as usize] += 1;
        }
        counts
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.n_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                n_layers: self.n_layers,
            });
        }
        Ok(())
    }

    /// Sequence-level states of one layer (1-based).
    pub fn pool_sequences(&self, layer: usize, mode: PoolingMode) -> Result<LayerView> {
        self.check_layer(layer)?;
        let l = layer - 1;
        let (n, d) = (self.n_sequences(), self.dim);
        let per_token = self.n_layers * d;
        let mut vectors = DMatrix::<f64>::zeros(n, d);
        match &self.storage {
            Storage::Pooled { data, pooling } => {
                if let Some(stored) = *pooling {
                    if stored != mode {
                        return Err(Error::PoolingMismatch {
                            stored,
                            requested: mode,
                        });
                    }
                }
                for i in 0..n {
                    let row = &data[i * per_token + l * d..][..d];
                    for (j, &v) in row.iter().enumerate() {
                        vectors[(i, j)] = v as f64;
                    }
                }
            }
            Storage::Tokens { sequences } => {
                for (i, seq) in sequences.iter().enumerate() {
                    let token = |t: usize| &seq.states[t * per_token + l * d..][..d];
                    match mode {
                        PoolingMode::Cls => {
                            for (j, &v) in token(0).iter().enumerate() {
                                vectors[(i, j)] = v as f64;
                            }
                        }
                        PoolingMode::Mean => {
                            let mut acc = vec![0.0f64; d];
                            let mut count = 0usize;
                            for t in 1..=seq.n_tokens {
                                if seq.padding.as_ref().is_some_and(|m| m[t] != 0) {
                                    continue;
                                }
                                count += 1;
                                for (a, &v) in acc.iter_mut().zip(token(t)) {
                                    *a += v as f64;
                                }
                            }
                            if count == 0 {
                                return Err(Error::DegenerateSequence { sequence: i });
                            }
                            for (j, a) in acc.into_iter().enumerate() {
                                vectors[(i, j)] = a / count as f64;
                            }
                        }
                    }
                }
            }
        }
        Ok(LayerView {
            layer_index: layer,
            vectors,
            labels: self.labels.clone(),
            n_classes: self.n_classes,
        })
    }

    /// Draws exactly `per_class_counts[y]` members of each listed class.
    ///
    /// Selected rows keep their original relative order. Classes absent from
    /// the map are dropped; class ids are not renumbered.
    pub fn subsample(&self, per_class_counts: &BTreeMap<u32, usize>, seed: u64) -> Result<Self> {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y as usize].push(i);
        }
        let mut selected = Vec::new();
        for (&class, &count) in per_class_counts {
            let pool = by_class
                .get(class as usize)
                .ok_or_else(|| Error::InvalidArgument(format!("class {class} does not exist")))?;
            if count > pool.len() {
                return Err(Error::InsufficientData {
                    class,
                    requested: count,
                    available: pool.len(),
                });
            }
            let mut rng = seed::rng_for(seed, &format!("subsample/class{class}"));
            let mut pool = pool.clone();
            let (chosen, _) = pool.partial_shuffle(&mut rng, count);
            selected.extend_from_slice(chosen);
        }
        selected.sort_unstable();
        Ok(self.select_rows(&selected))
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let storage = match &self.storage {
            Storage::Pooled { data, pooling } => {
                let per = self.n_layers * self.dim;
                let mut out = Vec::with_capacity(rows.len() * per);
                for &i in rows {
                    out.extend_from_slice(&data[i * per..(i + 1) * per]);
                }
                Storage::Pooled {
                    data: out,
                    pooling: *pooling,
                }
            }
            Storage::Tokens { sequences } => Storage::Tokens {
                sequences: rows.iter().map(|&i| sequences[i].clone()).collect(),
            },
        };
        HiddenStateDataset {
            n_layers: self.n_layers,
            dim: self.dim,
            n_classes: self.n_classes,
            labels,
            storage,
            label_names: self.label_names.clone(),
        }
    }

    /// Raw stored values of sequence `i`, used for content-stable hashing.
    pub(crate) fn sequence_payload(&self, i: usize) -> &[f32] {
        match &self.storage {
            Storage::Pooled { data, .. } => {
                let per = self.n_layers * self.dim;
                &data[i * per..(i + 1) * per]
            }
            Storage::Tokens { sequences } => &sequences[i].states,
        }
    }
}

/// Sequence-level states of one layer: an `N x D` matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerView {
    pub layer_index: usize,
    pub vectors: DMatrix<f64>,
    pub labels: Vec<u32>,
    pub n_classes: usize,
}

impl LayerView {
    pub fn new(
        layer_index: usize,
        vectors: DMatrix<f64>,
        labels: Vec<u32>,
        n_classes: usize,
    ) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(Error::LengthMismatch(vectors.nrows(), labels.len()));
        }
        if layer_index == 0 {
            return Err(Error::LayerOutOfRange {
                layer: 0,
                n_layers: 0,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= n_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        Ok(LayerView {
            layer_index,
            vectors,
            labels,
            n_classes,
        })
    }

    /// Convenience constructor from row slices, mostly for tests and demos.
    pub fn from_rows(rows: &[Vec<f64>], labels: &[u32], n_classes: usize) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidDataset("ragged rows".into()));
        }
        let m = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        LayerView::new(1, m, labels.to_vec(), n_classes)
    }

    pub fn n_rows(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows `idx` as a new view with the same layer index and class count.
    pub fn select_rows(&self, idx: &[usize]) -> LayerView {
        let vectors = self.vectors.select_rows(idx.iter());
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        LayerView {
            layer_index: self.layer_index,
            vectors,
            labels,
            n_classes: self.n_classes,
        }
    }

    /// Partition row indices by class id, rejecting empty classes.
    pub fn group_by_label(&self) -> Result<ClassPartition> {
        if self.n_rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut groups = vec![Vec::new(); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y as usize].push(i);
        }
        if let Some(empty) = groups.iter().position(Vec::is_empty) {
            return Err(Error::EmptyClass {
                class: empty as u32,
            });
        }
        Ok(ClassPartition { groups })
    }
}

/// Row indices grouped by class; `groups[y]` lists the rows of class `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    groups: Vec<Vec<usize>>,
}

impl ClassPartition {
    pub fn n_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, class: usize) -> &[usize] {
        &self.groups[class]
    }

    /// Groups in ascending class order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[usize])> {
        self.groups
            .iter()
            .enumerate()
            .map(|(y, g)| (y as u32, g.as_slice()))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
}
