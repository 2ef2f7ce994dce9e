//! Retrieval, hybrid re-ranking, prompt assembly and grounded generation.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{embed_with_retry, EmbedError, EmbeddingProvider, EmbeddingRole};
use crate::ingest::{sentence_ranges, Chunk, KnowledgeBase};
use crate::normalize::{normalize_text, Script, PHONE_TOKEN};
use crate::remote::{JsonClient, RemoteError};
use crate::timing::StageLatencies;
use crate::vecindex::IndexError;

pub const DEFAULT_FALLBACK_TEXT: &str =
    "Smahli, ma l9itch l'information hadi f les documents ta3na. Tasel b service client 3la 888.";
const EMBED_ATTEMPTS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("embedding the question failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("index search failed: {0}")]
    Index(#[from] IndexError),
}

impl RagError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RagError::Embed(e) if e.is_retryable())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error("generation provider unavailable: {0}")]
    Unavailable(#[from] RemoteError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagConfig {
    pub k1: usize,
    pub k2: usize,
    pub alpha: f64,
    pub min_score: f64,
    pub fallback_text: String,
    pub max_tokens: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 4,
            alpha: 0.7,
            min_score: 0.3,
            fallback_text: DEFAULT_FALLBACK_TEXT.to_string(),
            max_tokens: 256,
        }
    }
}

/// A first-stage hit with its dense score.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub chunk: Chunk,
    pub dense: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub chunk: Chunk,
    pub dense: f64,
    pub lexical: f64,
    pub score: f64,
}

/// Normalized whitespace tokens with punctuation trimmed from both ends;
/// the phone placeholder is kept whole.
pub fn lexical_tokens(text: &str) -> BTreeSet<String> {
    normalize_text(text)
        .text
        .split_whitespace()
        .map(|t| {
            if t == PHONE_TOKEN {
                t.to_string()
            } else {
                t.trim_matches(|c: char| !c.is_alphanumeric()).to_string()
            }
        })
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Embed the question as a query and return the top `k1` chunks.
pub fn retrieve<P: EmbeddingProvider + ?Sized>(
    question: &str,
    provider: &P,
    kb: &KnowledgeBase,
    k1: usize,
) -> Result<Vec<Candidate>, RagError> {
    if kb.is_empty() || k1 == 0 {
        return Ok(Vec::new());
    }
    let text = normalize_text(question).text;
    let query = embed_with_retry(provider, &[&text], EmbeddingRole::Query, EMBED_ATTEMPTS)?.remove(0);
    Ok(kb
        .search(&query, k1)?
        .into_iter()
        .filter_map(|h| {
            kb.chunk_by_key(h.id).map(|c| Candidate {
                chunk: c.clone(),
                dense: h.score,
            })
        })
        .collect())
}

/// Blend `alpha·dense + (1−alpha)·lexical`, drop results under `min_score`
/// and keep the best `k2`. Ties keep the first-stage order.
pub fn rerank(question: &str, candidates: Vec<Candidate>, alpha: f64, k2: usize, min_score: f64) -> Vec<RetrievalResult> {
    let q = lexical_tokens(question);
    let mut results: Vec<RetrievalResult> = candidates
        .into_iter()
        .map(|c| {
            let lexical = jaccard(&q, &lexical_tokens(&c.chunk.body));
            RetrievalResult {
                score: alpha * c.dense + (1.0 - alpha) * lexical,
                dense: c.dense,
                lexical,
                chunk: c.chunk,
            }
        })
        .collect();
    results.sort_by(|a, b| b.score.total_cmp(&a.score));
    results.retain(|r| r.score >= min_score);
    results.truncate(k2);
    results
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Passage {
    /// Chunk id used as the source label.
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system: String,
    pub passages: Vec<Passage>,
    pub question: String,
    pub language_hint: String,
    pub fallback_text: String,
    pub empty_context: bool,
}

pub fn language_hint(script: Script) -> &'static str {
    match script {
        Script::Arabic => "respond in Arabic-script Darja",
        Script::Latin => "respond in Latin-script Darja",
    }
}

pub fn build_prompt(question: &str, results: &[RetrievalResult], script: Script, fallback_text: &str) -> PromptBundle {
    let system = format!(
        "You are a customer support assistant for a mobile operator. Answer ONLY from the numbered passages \
         below. If they do not contain the answer, reply with exactly this sentence: {fallback_text}"
    );
    PromptBundle {
        system,
        passages: results
            .iter()
            .map(|r| Passage {
                source: r.chunk.id.clone(),
                text: r.chunk.body.trim().to_string(),
            })
            .collect(),
        question: question.to_string(),
        language_hint: language_hint(script).to_string(),
        fallback_text: fallback_text.to_string(),
        empty_context: results.is_empty(),
    }
}

impl PromptBundle {
    pub fn sources(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.source.clone()).collect()
    }

    /// Plain-text prompt for a remote model.
    pub fn render(&self) -> String {
        let mut out = format!("{}\n\n", self.system);
        for (i, p) in self.passages.iter().enumerate() {
            out.push_str(&format!("[{}] (source: {})\n{}\n\n", i + 1, p.source, p.text));
        }
        out.push_str(&format!("Question: {}\nInstruction: {}.\nAnswer:", self.question, self.language_hint));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Answer {
    pub text: String,
    pub sources: Vec<String>,
    pub grounded: bool,
}

pub trait Generator: Send + Sync {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GenerateError>;
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GenerateError> {
        (**self).generate(bundle)
    }
}

/// Returns, verbatim, the sentence of the top passage that shares the most
/// tokens with the question. Markdown heading lines are skipped unless
/// nothing else is left. An optional delay simulates model latency.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator {
    pub delay: Duration,
}

impl ExtractiveGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_delay(delay: Duration) -> Self {
        Self { delay }
    }
}

fn best_sentence<'a>(passage: &'a str, question: &str) -> &'a str {
    let q = lexical_tokens(question);
    let sentences: Vec<&str> = sentence_ranges(passage)
        .into_iter()
        .map(|r| passage[r].trim())
        .filter(|s| !s.is_empty())
        .collect();
    let body: Vec<&str> = sentences.iter().copied().filter(|s| !s.starts_with('#')).collect();
    let pool = if body.is_empty() { &sentences } else { &body };
    let mut best: Option<(&str, usize)> = None;
    for s in pool {
        let overlap = lexical_tokens(s).intersection(&q).count();
        if best.is_none_or(|(_, o)| overlap > o) {
            best = Some((s, overlap));
        }
    }
    best.map(|(s, _)| s).unwrap_or(passage.trim())
}

impl Generator for ExtractiveGenerator {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GenerateError> {
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        Ok(match bundle.passages.first() {
            Some(p) => best_sentence(&p.text, &bundle.question).to_string(),
            None => bundle.fallback_text.clone(),
        })
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: u8,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

#[derive(Debug)]
pub struct RemoteGenerator {
    client: JsonClient,
    max_tokens: usize,
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, max_tokens: usize, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            client: JsonClient::new(endpoint, timeout, max_in_flight),
            max_tokens,
        }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GenerateError> {
        let prompt = bundle.render();
        let resp: GenerateResponse = self.client.post(&GenerateRequest {
            prompt: &prompt,
            max_tokens: self.max_tokens,
            temperature: 0,
        })?;
        Ok(resp.text)
    }
}

#[derive(Debug, Default)]
pub struct CountingGenerator<G> {
    inner: G,
    calls: AtomicUsize,
}

impl<G> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<G: Generator> Generator for CountingGenerator<G> {
    fn generate(&self, bundle: &PromptBundle) -> Result<String, GenerateError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(bundle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Remote,
    Extractive,
}

impl std::str::FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "remote" => Ok(GeneratorKind::Remote),
            "extractive" => Ok(GeneratorKind::Extractive),
            other => Err(format!("unknown generator kind {other:?} (expected remote or extractive)")),
        }
    }
}

impl std::fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GeneratorKind::Remote => "remote",
            GeneratorKind::Extractive => "extractive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub kind: GeneratorKind,
    pub endpoint: String,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    /// Artificial latency of the extractive generator.
    pub delay_ms: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            kind: GeneratorKind::Extractive,
            endpoint: String::new(),
            timeout_ms: 30_000,
            max_in_flight: 2,
            delay_ms: 0,
        }
    }
}

pub fn build_generator(config: &GeneratorConfig, max_tokens: usize) -> Result<Arc<dyn Generator>, String> {
    Ok(match config.kind {
        GeneratorKind::Extractive => Arc::new(ExtractiveGenerator::with_delay(Duration::from_millis(config.delay_ms))),
        GeneratorKind::Remote => {
            if config.endpoint.is_empty() {
                return Err("remote generator needs an endpoint".into());
            }
            Arc::new(RemoteGenerator::new(
                config.endpoint.clone(),
                max_tokens,
                Duration::from_millis(config.timeout_ms),
                config.max_in_flight,
            ))
        }
    })
}

/// Run the generator with one retry. An empty context short-circuits to the
/// fallback text; a provider that fails twice yields the fallback text with
/// `grounded = false`.
pub fn generate<G: Generator + ?Sized>(bundle: &PromptBundle, generator: &G) -> Answer {
    if bundle.empty_context {
        return Answer {
            text: bundle.fallback_text.clone(),
            sources: Vec::new(),
            grounded: true,
        };
    }
    let mut last = None;
    for _ in 0..2 {
        match generator.generate(bundle) {
            Ok(text) => {
                return Answer {
                    text,
                    sources: bundle.sources(),
                    grounded: true,
                }
            }
            Err(e) => last = Some(e),
        }
    }
    log::error!("generation failed after retry: {}", last.expect("an error was recorded"));
    Answer {
        text: bundle.fallback_text.clone(),
        sources: bundle.sources(),
        grounded: false,
    }
}

/// Share of the answer's content tokens found in the bundle's passages;
/// 1.0 when the answer has no content tokens.
pub fn groundedness(answer: &str, bundle: &PromptBundle) -> f64 {
    let answer_tokens = lexical_tokens(answer);
    if answer_tokens.is_empty() {
        return 1.0;
    }
    let context: BTreeSet<String> = bundle.passages.iter().flat_map(|p| lexical_tokens(&p.text)).collect();
    answer_tokens.iter().filter(|t| context.contains(*t)).count() as f64 / answer_tokens.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RagOutcome {
    pub answer: Answer,
    pub results: Vec<RetrievalResult>,
    pub bundle: PromptBundle,
}

/// Retrieve, re-rank, build the prompt and generate, recording each stage.
/// Retrieval failures degrade to the fallback text with `grounded = false`.
pub fn answer_question<P, G>(
    question: &str,
    script: Script,
    provider: &P,
    kb: &KnowledgeBase,
    generator: &G,
    config: &RagConfig,
    latencies: &mut StageLatencies,
) -> RagOutcome
where
    P: EmbeddingProvider + ?Sized,
    G: Generator + ?Sized,
{
    let candidates = latencies.time("retrieve", || retrieve(question, provider, kb, config.k1));
    let candidates = match candidates {
        Ok(c) => c,
        Err(e) => {
            log::error!("retrieval failed: {e}");
            let bundle = build_prompt(question, &[], script, &config.fallback_text);
            return RagOutcome {
                answer: Answer {
                    text: config.fallback_text.clone(),
                    sources: Vec::new(),
                    grounded: false,
                },
                results: Vec::new(),
                bundle,
            };
        }
    };
    let results = latencies.time("rerank", || rerank(question, candidates, config.alpha, config.k2, config.min_score));
    let bundle = latencies.time("prompt", || build_prompt(question, &results, script, &config.fallback_text));
    let answer = latencies.time("generate", || generate(&bundle, generator));
    RagOutcome {
        answer,
        results,
        bundle,
    }
}
