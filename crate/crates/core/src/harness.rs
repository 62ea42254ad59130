//! Synthetic hidden states with a controllable per-layer collapse profile,
//! plus the imbalance, scarcity and pooling robustness sweeps.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{HiddenStateDataset, PoolingMode, TokenSequence};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{self, smoothness_zeta, CurveOptions, MetricCurve, MetricId};
use crate::par;
use crate::probe::{self, HeadKind, LogRegConfig, ScoreKind};
use crate::seed;

/// How the CLS state of a synthetic token sequence is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClsState {
    /// Isotropic Gaussian noise of the given scale, unrelated to the label.
    Noise(f64),
    /// A copy of the sequence's pooled state.
    CopyOfMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseProfile {
    /// Within-class noise scale per layer.
    pub noise_scale: Vec<f64>,
    /// Distance of every class mean from the origin, per layer.
    pub mean_radius: Vec<f64>,
    pub n_classes: usize,
    pub dim: usize,
    /// Tokens per sequence for token-level output; 0 produces pooled storage.
    pub n_tokens: usize,
    pub cls: ClsState,
    pub seed: u64,
}

impl CollapseProfile {
    /// Noise grows linearly away from `best_layer` (1-based) while the class
    /// means stay on the unit sphere, so the layer-wise ratio is V-shaped with
    /// its minimum at `best_layer`.
    pub fn v_shaped(
        n_layers: usize,
        dim: usize,
        n_classes: usize,
        best_layer: usize,
        min_noise: f64,
        slope: f64,
        seed: u64,
    ) -> Self {
        let noise_scale = (1..=n_layers)
            .map(|l| min_noise * (1.0 + slope * l.abs_diff(best_layer) as f64))
            .collect();
        CollapseProfile {
            noise_scale,
            mean_radius: vec![1.0; n_layers],
            n_classes,
            dim,
            n_tokens: 0,
            cls: ClsState::Noise(1.0),
            seed,
        }
    }

    /// Desk-scale default: 12 layers, D = 16, minimum at layer 6.
    pub fn standard(n_classes: usize, seed: u64) -> Self {
        Self::v_shaped(12, 16, n_classes, 6, 0.3, 0.3, seed)
    }

    pub fn n_layers(&self) -> usize {
        self.noise_scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.noise_scale.is_empty() || self.noise_scale.len() != self.mean_radius.len() {
            return bad("noise and radius profiles must be nonempty and equally long");
        }
        if self.noise_scale.iter().chain(&self.mean_radius).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("profile scales must be finite and non-negative");
        }
        if self.n_classes == 0 || self.dim == 0 {
            return bad("n_classes and dim must be positive");
        }
        if let ClsState::Noise(s) = self.cls {
            if !(s.is_finite() && s >= 0.0) {
                return bad("CLS noise scale must be finite and non-negative");
            }
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `k` independent uniform draws from the unit sphere in `d` dimensions.
fn class_directions(k: usize, d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(k);
    while dirs.len() < k {
        let v = gaussian(rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            dirs.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    dirs
}

/// Generates `n_per_class[y]` sequences of class `y`.
///
/// Class directions are drawn once and scaled by each layer's radius. Each
/// sequence's pooled state is its class mean plus isotropic noise. Token-level
/// output spreads the pooled state over `n_tokens` tokens whose mean equals it,
/// and adds a CLS state at position 0.
pub fn synth_generate(profile: &CollapseProfile, n_per_class: &[usize]) -> Result<HiddenStateDataset> {
    profile.validate()?;
    if n_per_class.len() != profile.n_classes {
        return Err(Error::InvalidArgument(format!(
            "{} class counts for {} classes",
            n_per_class.len(),
            profile.n_classes
        )));
    }
    let (l, d, k) = (profile.n_layers(), profile.dim, profile.n_classes);
    let dirs = class_directions(k, d, &mut seed::rng_for(profile.seed, "synth/means"));
    let mut rng = seed::rng_for(profile.seed, "synth/samples");
    let labels: Vec<u32> = n_per_class
        .iter()
        .enumerate()
        .flat_map(|(y, &n)| std::iter::repeat_n(y as u32, n))
        .collect();

    let pooled_state = |rng: &mut _, y: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(l * d);
        for layer in 0..l {
            let noise = gaussian(rng, d);
            for j in 0..d {
                out.push(dirs[y][j] * profile.mean_radius[layer] + noise[j] * profile.noise_scale[layer]);
            }
        }
        out
    };

    if profile.n_tokens == 0 {
        let mut data = Vec::with_capacity(labels.len() * l * d);
        for &y in &labels {
            data.extend(pooled_state(&mut rng, y as usize).into_iter().map(|v| v as f32));
        }
        return HiddenStateDataset::pooled(l, d, k, labels, data, Some(PoolingMode::Mean));
    }

    let t = profile.n_tokens;
    let mut sequences = Vec::with_capacity(labels.len());
    for &y in &labels {
        let pooled = pooled_state(&mut rng, y as usize);
        let mut states = vec![0f32; (t + 1) * l * d];
        let cls: Vec<f64> = match profile.cls {
            ClsState::CopyOfMean => pooled.clone(),
            ClsState::Noise(s) => gaussian(&mut rng, l * d).into_iter().map(|v| v * s).collect(),
        };
        for (dst, v) in states[..l * d].iter_mut().zip(&cls) {
            *dst = *v as f32;
        }
        for idx in 0..l * d {
            let layer = idx / d;
            let jitter = gaussian(&mut rng, t);
            let centre = jitter.iter().sum::<f64>() / t as f64;
            for (tok, z) in jitter.iter().enumerate() {
                let v = pooled[idx] + (z - centre) * profile.noise_scale[layer];
                states[(tok + 1) * l * d + idx] = v as f32;
            }
        }
        sequences.push(TokenSequence {
            n_tokens: t,
            states,
            padding: None,
        });
    }
    HiddenStateDataset::tokens(l, d, k, labels, sequences)
}

/// Settings shared by the sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub pooling: PoolingMode,
    pub head: HeadKind,
    pub score: ScoreKind,
    pub curve: CurveOptions,
    pub logreg: LogRegConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            pooling: PoolingMode::Mean,
            head: HeadKind::Lda,
            score: ScoreKind::Acc,
            curve: CurveOptions::default(),
            logreg: LogRegConfig::default(),
        }
    }
}

/// What a sweep row is keyed by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepKey {
    /// Fraction of class 0.
    Fraction(f64),
    /// Total sample count.
    Total(usize),
    /// Explicit per-class counts.
    Counts(Vec<usize>),
}

/// One sweep setting. `zeta` and `abs_rho` are `None` when undefined (for
/// example a constant curve at extreme scarcity).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub key: SweepKey,
    pub nu: MetricCurve,
    pub probe: Option<MetricCurve>,
    pub zeta: Option<f64>,
    pub abs_rho: Option<f64>,
}

fn analyze_setting(ds: &HiddenStateDataset, key: SweepKey, seed: u64, cfg: &SweepConfig) -> Result<SweepRow> {
    let opts = CurveOptions { seed, ..cfg.curve.clone() };
    let nu = metrics::curve(ds, MetricId::Nu, cfg.pooling, &opts)?;
    let zeta = smoothness_zeta(&nu, true).ok();
    let probe = probe::probe_curve(ds, cfg.head, cfg.score, cfg.pooling, seed, &cfg.logreg).ok();
    let abs_rho = probe
        .as_ref()
        .and_then(|p| linalg::pearson(nu.values(), p.values()).ok())
        .map(f64::abs);
    Ok(SweepRow {
        key,
        nu,
        probe,
        zeta,
        abs_rho,
    })
}

/// Sweeps explicit per-class count vectors. Setting `i` uses seed `seed + i`.
pub fn sweep_counts(
    ds: &HiddenStateDataset,
    counts: &[Vec<usize>],
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    for c in counts {
        if c.len() != ds.n_classes() {
            return Err(Error::InvalidArgument(format!(
                "count vector has {} entries for {} classes",
                c.len(),
                ds.n_classes()
            )));
        }
    }
    run_settings(ds, counts, seed, cfg, |c| SweepKey::Counts(c.to_vec()))
}

fn run_settings(
    ds: &HiddenStateDataset,
    counts: &[Vec<usize>],
    seed: u64,
    cfg: &SweepConfig,
    key: impl Fn(&[usize]) -> SweepKey + Sync + Send,
) -> Result<Vec<SweepRow>> {
    par::map_indexed(counts.len(), |i| {
        let s = seed.wrapping_add(i as u64);
        let request: BTreeMap<u32, usize> =
            counts[i].iter().enumerate().map(|(y, &n)| (y as u32, n)).collect();
        let sub = ds.subsample(&request, s)?;
        analyze_setting(&sub, key(&counts[i]), s, cfg)
    })
    .into_iter()
    .collect()
}

/// Binary imbalance sweep: for each `p`, `round(p * n_total)` rows of class 0
/// and the rest of class 1.
pub fn sweep_imbalance(
    ds: &HiddenStateDataset,
    p_list: &[f64],
    n_total: usize,
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if ds.n_classes() != 2 {
        return Err(Error::InvalidArgument(format!(
            "imbalance sweep needs binary labels, dataset has {} classes",
            ds.n_classes()
        )));
    }
    let mut counts = Vec::new();
    for &p in p_list {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("fraction {p} outside [0, 1]")));
        }
        let n0 = (p * n_total as f64).round() as usize;
        counts.push(vec![n0, n_total - n0]);
    }
    let ps = p_list.to_vec();
    let mut rows = run_settings(ds, &counts, seed, cfg, |_| SweepKey::Total(0))?;
    for (row, p) in rows.iter_mut().zip(ps) {
        row.key = SweepKey::Fraction(p);
    }
    Ok(rows)
}

/// Scarcity sweep: for each `N`, a class-balanced subsample of `N / K` rows per class.
pub fn sweep_scarcity(
    ds: &HiddenStateDataset,
    n_list: &[usize],
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    let k = ds.n_classes();
    let mut counts = Vec::new();
    for &n in n_list {
        if n % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "N = {n} cannot be split evenly over {k} classes"
            )));
        }
        counts.push(vec![n / k; k]);
    }
    run_settings(ds, &counts, seed, cfg, |c| SweepKey::Total(c.iter().sum()))
}

/// Normalized smoothness of the `nu` curve under MEAN and CLS pooling.
pub fn pooling_comparison(ds: &HiddenStateDataset, opts: &CurveOptions) -> Result<(f64, f64)> {
    if !ds.is_token_level() {
        return Err(Error::NotTokenLevel);
    }
    let mean = metrics::curve(ds, MetricId::Nu, PoolingMode::Mean, opts)?;
    let cls = metrics::curve(ds, MetricId::Nu, PoolingMode::Cls, opts)?;
    Ok((smoothness_zeta(&mean, true)?, smoothness_zeta(&cls, true)?))
}
