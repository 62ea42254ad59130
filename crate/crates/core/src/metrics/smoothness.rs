//! Local smoothness of a per-layer curve.

use crate::error::{Error, Result};
use crate::metrics::MetricCurve;

/// Sum of squared second differences of the curve.
///
/// With `normalize`, values are first standardized with the population mean
/// and standard deviation.
pub fn smoothness_zeta(curve: &MetricCurve, normalize: bool) -> Result<f64> {
    let v = curve.values();
    if v.len() < 3 {
        return Err(Error::UndefinedSmoothness("need at least 3 layers"));
    }
    if let Some(i) = v.iter().position(|x| x.is_infinite()) {
        return Err(Error::SentinelInCurve { layer: i + 1 });
    }
    let values: Vec<f64> = if normalize {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            return Err(Error::UndefinedSmoothness("constant curve cannot be standardized"));
        }
        v.iter().map(|x| (x - mean) / sd).collect()
    } else {
        v.to_vec()
    };
    Ok(values
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2))
        .sum())
}
