//! Request counters and per-stage latency histograms, rendered as plain
//! text in the Prometheus exposition format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use darja_core::timing::StageLatencies;

/// Upper bucket bounds in milliseconds; a final `+Inf` bucket is implied.
pub const BUCKETS_MS: [f64; 14] = [0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 5000.0];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Histogram {
    /// Non-cumulative counts per bucket, the last one for `+Inf`.
    counts: [u64; BUCKETS_MS.len() + 1],
    sum: f64,
    count: u64,
}

impl Histogram {
    pub fn observe(&mut self, ms: f64) {
        let slot = BUCKETS_MS.iter().position(|&b| ms <= b).unwrap_or(BUCKETS_MS.len());
        self.counts[slot] += 1;
        self.sum += ms;
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }

    /// Cumulative counts, one per bound plus `+Inf`.
    pub fn cumulative(&self) -> Vec<u64> {
        self.counts
            .iter()
            .scan(0, |acc, c| {
                *acc += c;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Default)]
struct Inner {
    requests: BTreeMap<(String, u16), u64>,
    routes: BTreeMap<String, u64>,
    stages: BTreeMap<String, Histogram>,
}

#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<Inner>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn record_request(&self, endpoint: &str, status: u16) {
        *self.lock().requests.entry((endpoint.to_string(), status)).or_default() += 1;
    }

    pub fn record_route(&self, route: &str) {
        *self.lock().routes.entry(route.to_string()).or_default() += 1;
    }

    pub fn record_stages(&self, latencies: &StageLatencies) {
        let mut inner = self.lock();
        for (stage, ms) in latencies.iter() {
            inner.stages.entry(stage.to_string()).or_default().observe(ms);
        }
    }

    pub fn request_count(&self, endpoint: &str, status: u16) -> u64 {
        self.lock().requests.get(&(endpoint.to_string(), status)).copied().unwrap_or(0)
    }

    pub fn stage(&self, stage: &str) -> Option<Histogram> {
        self.lock().stages.get(stage).cloned()
    }

    pub fn render(&self) -> String {
        let inner = self.lock();
        let mut out = String::new();
        out.push_str("# TYPE darja_requests_total counter\n");
        for ((endpoint, status), n) in &inner.requests {
            let _ = writeln!(out, "darja_requests_total{{endpoint=\"{endpoint}\",status=\"{status}\"}} {n}");
        }
        out.push_str("# TYPE darja_routes_total counter\n");
        for (route, n) in &inner.routes {
            let _ = writeln!(out, "darja_routes_total{{route=\"{route}\"}} {n}");
        }
        out.push_str("# TYPE darja_stage_latency_ms histogram\n");
        for (stage, h) in &inner.stages {
            let cumulative = h.cumulative();
            for (bound, c) in BUCKETS_MS.iter().zip(&cumulative) {
                let _ = writeln!(out, "darja_stage_latency_ms_bucket{{stage=\"{stage}\",le=\"{bound}\"}} {c}");
            }
            let _ = writeln!(out, "darja_stage_latency_ms_bucket{{stage=\"{stage}\",le=\"+Inf\"}} {}", h.count);
            let _ = writeln!(out, "darja_stage_latency_ms_sum{{stage=\"{stage}\"}} {}", h.sum);
            let _ = writeln!(out, "darja_stage_latency_ms_count{{stage=\"{stage}\"}} {}", h.count);
        }
        out
    }
}
