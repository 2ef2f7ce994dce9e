//! Per-stage wall-clock accounting.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Milliseconds spent per named stage; repeated stages accumulate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageLatencies(pub BTreeMap<String, f64>);

impl StageLatencies {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn record(&mut self, stage: &str, ms: f64) {
        *self.0.entry(stage.to_string()).or_default() += ms;
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.0.get(stage).copied()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    pub fn merge(&mut self, other: &StageLatencies) {
        for (k, v) in &other.0 {
            self.record(k, *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Nearest-rank percentile of `samples` (`q` in [0, 1]); NaN when empty.
pub fn percentile(samples: &[f64], q: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.5), 50.0);
        assert_eq!(percentile(&s, 0.95), 95.0);
        assert_eq!(percentile(&s, 1.0), 100.0);
        assert_eq!(percentile(&[7.0], 0.0), 7.0);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn stages_accumulate() {
        let mut l = StageLatencies::new();
        l.record("embed", 1.5);
        l.record("embed", 2.0);
        assert_eq!(l.get("embed"), Some(3.5));
        assert_eq!(l.total(), 3.5);
    }
}
