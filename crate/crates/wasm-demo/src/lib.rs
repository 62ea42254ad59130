//! Browser bindings for the interactive demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated TypeScript types.

use layer_specialty::harness::{self, ClsState, CollapseProfile};
use layer_specialty::linalg;
use layer_specialty::metrics::{self, smoothness_zeta, CurveOptions};
use layer_specialty::probe::{self, HeadKind, LogRegConfig, ScoreKind};
use layer_specialty::strategy::{self, StrategyKind};
use layer_specialty::{MetricId, PoolingMode, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

// Keeps page interaction snappy.
const MAX_ROWS: usize = 4000;

#[derive(Debug, Serialize)]
pub struct CurveReport {
    pub nu: Vec<f64>,
    pub nu_strict: Vec<f64>,
    pub probe: Vec<f64>,
    pub best_layer: usize,
    pub best_probe_layer: usize,
    pub pearson: f64,
}

#[derive(Debug, Serialize)]
pub struct PlanRow {
    pub kind: String,
    pub strategy: String,
    pub tuned_fraction: f64,
    pub dropped_fraction: f64,
    pub large_saving: bool,
}

#[derive(Debug, Serialize)]
pub struct PoolingReport {
    pub nu_mean: Vec<f64>,
    pub nu_cls: Vec<f64>,
    pub zeta_mean: f64,
    pub zeta_cls: f64,
}

fn profile(layers: usize, best: usize, classes: usize, min_noise: f64, slope: f64, seed: u64) -> CollapseProfile {
    CollapseProfile::v_shaped(layers, 16, classes, best, min_noise, slope, seed)
}

fn check_rows(classes: usize, per_class: usize) -> Result<()> {
    if classes * per_class > MAX_ROWS {
        return Err(layer_specialty::Error::InvalidArgument(format!(
            "at most {MAX_ROWS} rows in the demo, got {}",
            classes * per_class
        )));
    }
    Ok(())
}

/// `nu`, strict `nu` and LDA probe accuracy per layer of a synthetic stack.
pub fn curves(
    layers: usize,
    best: usize,
    classes: usize,
    per_class: usize,
    min_noise: f64,
    slope: f64,
    seed: u64,
) -> Result<CurveReport> {
    check_rows(classes, per_class)?;
    let p = profile(layers, best, classes, min_noise, slope, seed);
    p.validate()?;
    let ds = harness::synth_generate(&p, &vec![per_class; classes])?;
    let opts = CurveOptions { seed, ..Default::default() };
    let nu = metrics::curve(&ds, MetricId::Nu, PoolingMode::Mean, &opts)?;
    let nu_strict = metrics::curve(&ds, MetricId::NuStrict, PoolingMode::Mean, &opts)?;
    let acc = probe::probe_curve(&ds, HeadKind::Lda, ScoreKind::Acc, PoolingMode::Mean, seed, &LogRegConfig::default())?;
    let best_probe_layer = acc
        .values()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
        + 1;
    Ok(CurveReport {
        best_layer: strategy::best_layer(&nu)?,
        best_probe_layer,
        pearson: linalg::pearson(nu.values(), acc.values())?,
        nu: nu.values().to_vec(),
        nu_strict: nu_strict.values().to_vec(),
        probe: acc.values().to_vec(),
    })
}

/// Layer-selection plans around `l_star` with their costs.
pub fn plans(l_star: usize, n_layers: usize) -> Result<Vec<PlanRow>> {
    let mut rows = Vec::new();
    for kind in [StrategyKind::Down, StrategyKind::Up, StrategyKind::Baseline] {
        for t in strategy::enumerate_strategies(l_star, n_layers, kind)? {
            let c = strategy::cost_model(&t, n_layers)?;
            rows.push(PlanRow {
                kind: kind.to_string(),
                strategy: t.to_string(),
                tuned_fraction: c.tuned_fraction,
                dropped_fraction: c.dropped_fraction,
                large_saving: c.large_saving(),
            });
        }
    }
    Ok(rows)
}

/// `nu` curves under MEAN and CLS pooling of a token-level synthetic stack.
pub fn pooling(layers: usize, tokens: usize, cls_noise: f64, per_class: usize, seed: u64) -> Result<PoolingReport> {
    check_rows(2, per_class)?;
    let mut p = profile(layers, layers.div_ceil(2), 2, 0.3, 0.3, seed);
    p.n_tokens = tokens;
    p.cls = if cls_noise > 0.0 { ClsState::Noise(cls_noise) } else { ClsState::CopyOfMean };
    p.validate()?;
    let ds = harness::synth_generate(&p, &[per_class, per_class])?;
    let opts = CurveOptions { seed, ..Default::default() };
    let mean = metrics::curve(&ds, MetricId::Nu, PoolingMode::Mean, &opts)?;
    let cls = metrics::curve(&ds, MetricId::Nu, PoolingMode::Cls, &opts)?;
    Ok(PoolingReport {
        zeta_mean: smoothness_zeta(&mean, true)?,
        zeta_cls: smoothness_zeta(&cls, true)?,
        nu_mean: mean.values().to_vec(),
        nu_cls: cls.values().to_vec(),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    match r {
        // serde_json writes non-finite floats as null, which the page treats as a gap
        Ok(v) => serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())),
        Err(e) => Err(JsValue::from_str(&e.to_string())),
    }
}

#[wasm_bindgen(js_name = curves)]
pub fn curves_js(
    layers: usize,
    best: usize,
    classes: usize,
    per_class: usize,
    min_noise: f64,
    slope: f64,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(curves(layers, best, classes, per_class, min_noise, slope, seed as u64))
}

#[wasm_bindgen(js_name = plans)]
pub fn plans_js(l_star: usize, n_layers: usize) -> std::result::Result<String, JsValue> {
    to_js(plans(l_star, n_layers))
}

#[wasm_bindgen(js_name = pooling)]
pub fn pooling_js(
    layers: usize,
    tokens: usize,
    cls_noise: f64,
    per_class: usize,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    to_js(pooling(layers, tokens, cls_noise, per_class, seed as u64))
}
