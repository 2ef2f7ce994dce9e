//! Per-stage latency benchmark over both routing paths, with mock
//! providers and an optional artificial generation delay.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use darja_core::config::EngineConfig;
use darja_core::embed::{EmbeddingProvider, HashEmbedder};
use darja_core::fixtures::{labeled_questions, offers_document, OFFER_NAMES};
use darja_core::pipeline::IntentClassifier;
use darja_core::rag::ExtractiveGenerator;
use darja_core::router::{route, Engine, RoutePath};
use darja_core::synth::{generate, SynthConfig};
use darja_core::timing::percentile;

use crate::{app, CliError};

/// Seed of the synthetic utterances used as deterministic-path queries;
/// differs from the training default so the queries are unseen.
pub const QUERY_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct StageRow {
    pub stage: String,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    /// Mean stage time over the mean of all stages summed.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathReport {
    pub path: RoutePath,
    pub queries: usize,
    /// Wall-clock time of the whole turn.
    pub total_p50_ms: f64,
    pub total_p95_ms: f64,
    pub stages: Vec<StageRow>,
}

impl PathReport {
    pub fn dominant_stage(&self) -> Option<&StageRow> {
        self.stages.iter().max_by(|a, b| a.share.total_cmp(&b.share))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRow> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub paths: Vec<PathReport>,
}

impl BenchReport {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, path: RoutePath) -> Option<&PathReport> {
        self.paths.iter().find(|p| p.path == path)
    }

    /// Fixed-width table: one row per stage and a total row per path.
    pub fn render(&self) -> String {
        let mut out = format!("{:<6} {:<10} {:>8} {:>10} {:>10} {:>8}\n", "path", "stage", "queries", "p50_ms", "p95_ms", "share");
        for p in &self.paths {
            let name = p.path.wire_name();
            for s in &p.stages {
                let _ = writeln!(
                    out,
                    "{name:<6} {:<10} {:>8} {:>10.3} {:>10.3} {:>7.2}%",
                    s.stage,
                    p.queries,
                    s.p50_ms,
                    s.p95_ms,
                    s.share * 100.0
                );
            }
            let _ = writeln!(
                out,
                "{name:<6} {:<10} {:>8} {:>10.3} {:>10.3} {:>8}",
                "total", p.queries, p.total_p50_ms, p.total_p95_ms, "-"
            );
        }
        out
    }
}

/// Keep the queries the engine routes to `path`.
pub fn screen(engine: &Engine, queries: &[String], path: RoutePath) -> Vec<String> {
    let config = engine.config();
    queries
        .iter()
        .filter(|q| {
            engine
                .classifier()
                .classify(q)
                .map(|c| route(&c, config.tau, &config.knowledge_intents).path == path)
                .unwrap_or(false)
        })
        .cloned()
        .collect()
}

/// Answer `n` queries cycling through `pool` and summarise stage times.
/// `None` when `n` is zero or the pool is empty.
pub fn measure(engine: &Engine, pool: &[String], path: RoutePath, n: usize) -> Option<PathReport> {
    if n == 0 || pool.is_empty() {
        return None;
    }
    let mut totals = Vec::with_capacity(n);
    let mut stages: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for i in 0..n {
        let started = Instant::now();
        let Ok(reply) = engine.respond(&pool[i % pool.len()]) else {
            continue;
        };
        totals.push(started.elapsed().as_secs_f64() * 1e3);
        for (stage, ms) in reply.latencies.iter() {
            stages.entry(stage.to_string()).or_default().push(ms);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let all: f64 = stages.values().map(|v| mean(v)).sum();
    let rows = stages
        .iter()
        .map(|(stage, v)| StageRow {
            stage: stage.clone(),
            p50_ms: percentile(v, 0.5),
            p95_ms: percentile(v, 0.95),
            mean_ms: mean(v),
            share: if all > 0.0 { mean(v) / all } else { 0.0 },
        })
        .collect();
    Some(PathReport {
        path,
        queries: totals.len(),
        total_p50_ms: percentile(&totals, 0.5),
        total_p95_ms: percentile(&totals, 0.95),
        stages: rows,
    })
}

/// Deterministic-path and knowledge-path query pools: unseen synthetic
/// utterances and the labeled fixture questions.
pub fn default_queries() -> (Vec<String>, Vec<String>) {
    let synth = generate(&SynthConfig {
        seed: QUERY_SEED,
        ..SynthConfig::default()
    });
    let deterministic = synth.examples.iter().map(|e| e.text().to_string()).collect();
    let knowledge = labeled_questions().into_iter().map(|(q, _)| q.to_string()).collect();
    (deterministic, knowledge)
}

/// Measure `n` deterministic-path turns and `rag_n` knowledge-path turns.
pub fn run_bench(engine: &Engine, deterministic: &[String], knowledge: &[String], n: usize, rag_n: usize) -> BenchReport {
    let det_pool = screen(engine, deterministic, RoutePath::Deterministic);
    let rag_pool = screen(engine, knowledge, RoutePath::Knowledge);
    let paths = [
        measure(engine, &det_pool, RoutePath::Deterministic, n),
        measure(engine, &rag_pool, RoutePath::Knowledge, rag_n),
    ];
    BenchReport {
        paths: paths.into_iter().flatten().collect(),
    }
}

/// An engine over the configured classifier and templates with the hash
/// embedder and an extractive generator delayed by `delay`. Knowledge is
/// the configured documents, or the bundled offers pack when none are set.
pub fn mock_engine(config: &EngineConfig, classifier: Arc<IntentClassifier>, delay: Duration) -> Result<Engine, CliError> {
    let embedder: Arc<dyn EmbeddingProvider> = Arc::new(
        HashEmbedder::new(config.embed.dim, config.embed.seed).map_err(|e| CliError::Usage(format!("embed.dim: {e}")))?,
    );
    let knowledge = if config.knowledge_docs.is_empty() {
        let mut fixture = config.clone();
        fixture.offers = OFFER_NAMES.iter().map(|s| s.to_string()).collect();
        app::build_knowledge(&fixture, &[offers_document()], embedder.as_ref())?
    } else {
        app::build_knowledge(config, &app::read_documents(&config.knowledge_docs)?, embedder.as_ref())?
    };
    let generator = Arc::new(ExtractiveGenerator::with_delay(delay));
    app::assemble(config, classifier, knowledge, embedder, generator)
}
