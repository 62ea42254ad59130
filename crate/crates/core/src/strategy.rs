//! Layer-selection plans anchored at the best-specialized layer.
//!
//! A plan `(bottom, top, head)` tunes layers `bottom..=top`, attaches the
//! classification head after layer `head`, and drops every layer above `head`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricCurve;

/// Index (1-based) of the smallest curve value; ties go to the lowest layer.
pub fn best_layer(curve: &MetricCurve) -> Result<usize> {
    if curve.is_empty() {
        return Err(Error::InvalidArgument("empty curve".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in curve.values().iter().enumerate() {
        if v.is_infinite() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1).ok_or(Error::AllInfinite)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrategyTriple {
    pub bottom: usize,
    pub top: usize,
    pub head: usize,
}

impl StrategyTriple {
    pub fn new(bottom: usize, top: usize, head: usize, n_layers: usize) -> Result<Self> {
        let t = StrategyTriple { bottom, top, head };
        t.validate(n_layers)?;
        Ok(t)
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        let ok = 1 <= self.bottom
            && self.bottom <= self.top
            && self.top <= n_layers
            && (self.head == self.top || self.head == n_layers);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid strategy {self} for {n_layers} layers"
            )))
        }
    }

    pub fn tuned_layers(&self) -> usize {
        self.top - self.bottom + 1
    }
}

impl fmt::Display for StrategyTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.bottom, self.top, self.head)
    }
}

impl FromStr for StrategyTriple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed strategy {s:?}, expected (b,t,h)"));
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(bad)?;
        let parts: Vec<usize> = inner
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match parts[..] {
            [bottom, top, head] => Ok(StrategyTriple { bottom, top, head }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Tune up to the best layer: bottoms `{1, l*-2, l*-1, l*}`, heads `{l*, L}`.
    Down,
    /// Tune everything above the best layer: `(l*+1, L, L)`.
    Up,
    /// `(1, L, L)` and `(b, L, L)` for `b` in `{L-2, L-1, L}`.
    Baseline,
    /// The DOWN pattern anchored at the middle layer `ceil((L+1)/2)`.
    Middle,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Down => "down",
            StrategyKind::Up => "up",
            StrategyKind::Baseline => "baseline",
            StrategyKind::Middle => "middle",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(StrategyKind::Down),
            "up" => Ok(StrategyKind::Up),
            "baseline" => Ok(StrategyKind::Baseline),
            "middle" => Ok(StrategyKind::Middle),
            other => Err(Error::InvalidArgument(format!(
                "unknown strategy kind {other:?} (expected down, up, baseline or middle)"
            ))),
        }
    }
}

pub fn middle_layer(n_layers: usize) -> usize {
    (n_layers + 2) / 2
}

fn down_set(anchor: usize, n_layers: usize) -> Vec<StrategyTriple> {
    let bottoms = [1, anchor.saturating_sub(2), anchor.saturating_sub(1), anchor];
    let mut out = Vec::new();
    for b in bottoms {
        for h in [anchor, n_layers] {
            out.push(StrategyTriple {
                bottom: b.max(1),
                top: anchor,
                head: h,
            });
        }
    }
    out
}

/// The plans of one family, deduplicated and ordered by tuned layer count,
/// then head position.
pub fn enumerate_strategies(
    l_star: usize,
    n_layers: usize,
    kind: StrategyKind,
) -> Result<Vec<StrategyTriple>> {
    if n_layers == 0 || l_star == 0 || l_star > n_layers {
        return Err(Error::InvalidArgument(format!(
            "best layer {l_star} outside 1..={n_layers}"
        )));
    }
    let l = n_layers;
    let mut out = match kind {
        StrategyKind::Down => down_set(l_star, l),
        StrategyKind::Middle => down_set(middle_layer(l), l),
        StrategyKind::Up if l_star == l => Vec::new(),
        StrategyKind::Up => vec![StrategyTriple {
            bottom: l_star + 1,
            top: l,
            head: l,
        }],
        StrategyKind::Baseline => [1, l.saturating_sub(2), l.saturating_sub(1), l]
            .into_iter()
            .map(|b| StrategyTriple {
                bottom: b.max(1),
                top: l,
                head: l,
            })
            .collect(),
    };
    out.sort_by_key(|t| (t.tuned_layers(), t.head, t.bottom));
    out.dedup();
    debug_assert!(out.iter().all(|t| t.validate(l).is_ok()));
    Ok(out)
}

/// Share of the model a plan tunes and drops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub tuned_layers: usize,
    pub kept_layers: usize,
    pub dropped_layers: usize,
    pub tuned_fraction: f64,
    pub dropped_fraction: f64,
}

/// Dropped fraction above which a plan is flagged as a large saving.
pub const LARGE_SAVING_THRESHOLD: f64 = 0.4;

impl StrategyCost {
    pub fn large_saving(&self) -> bool {
        self.dropped_fraction > LARGE_SAVING_THRESHOLD
    }
}

pub fn cost_model(s: &StrategyTriple, n_layers: usize) -> Result<StrategyCost> {
    s.validate(n_layers)?;
    let l = n_layers as f64;
    let tuned = s.tuned_layers();
    Ok(StrategyCost {
        tuned_layers: tuned,
        kept_layers: s.head,
        dropped_layers: n_layers - s.head,
        tuned_fraction: tuned as f64 / l,
        dropped_fraction: (n_layers - s.head) as f64 / l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(b: usize, top: usize, h: usize) -> StrategyTriple {
        StrategyTriple { bottom: b, top, head: h }
    }

    #[test]
    fn argmin_rules() {
        assert_eq!(best_layer(&MetricCurve::new(vec![3.0, 1.0, 2.0])).unwrap(), 2);
        assert_eq!(best_layer(&MetricCurve::new(vec![1.0, 1.0])).unwrap(), 1);
        assert_eq!(best_layer(&MetricCurve::new(vec![f64::INFINITY, 5.0])).unwrap(), 2);
        assert!(matches!(
            best_layer(&MetricCurve::new(vec![f64::INFINITY; 2])),
            Err(Error::AllInfinite)
        ));
    }

    #[test]
    fn clamped_down_set() {
        let s = enumerate_strategies(1, 5, StrategyKind::Down).unwrap();
        assert_eq!(s, vec![t(1, 1, 1), t(1, 1, 5)]);
    }

    #[test]
    fn up_is_empty_at_top() {
        assert!(enumerate_strategies(5, 5, StrategyKind::Up).unwrap().is_empty());
        assert!(enumerate_strategies(6, 5, StrategyKind::Up).is_err());
    }

    #[test]
    fn middle_uses_ceiling() {
        assert_eq!(middle_layer(24), 13);
        assert_eq!(middle_layer(12), 7);
        let s = enumerate_strategies(3, 24, StrategyKind::Middle).unwrap();
        assert!(s.iter().all(|x| x.top == 13));
    }

    #[test]
    fn parse_display() {
        let x = t(12, 14, 24);
        assert_eq!(x.to_string(), "(12,14,24)");
        assert_eq!("(12,14,24)".parse::<StrategyTriple>().unwrap(), x);
        assert!("(1,2)".parse::<StrategyTriple>().is_err());
    }

    #[test]
    fn full_model_cost() {
        let c = cost_model(&t(1, 24, 24), 24).unwrap();
        assert_eq!((c.tuned_layers, c.dropped_layers), (24, 0));
        assert!(!c.large_saving());
        assert!(cost_model(&t(3, 2, 2), 24).is_err());
    }
}
