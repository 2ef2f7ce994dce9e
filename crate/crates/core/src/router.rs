//! Confidence routing between template replies and the knowledge path,
//! with per-session dialogue state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::classify::ClassifyError;
use crate::embed::EmbeddingProvider;
use crate::ingest::KnowledgeStore;
use crate::normalize::Script;
use crate::pipeline::{Classified, IntentClassifier};
use crate::rag::{answer_question, Generator, RagConfig};
use crate::timing::StageLatencies;

pub const DEFAULT_TAU: f64 = 0.7;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutePath {
    Deterministic,
    Knowledge,
}

impl RoutePath {
    /// Wire name: "nlu" or "rag".
    pub fn wire_name(self) -> &'static str {
        match self {
            RoutePath::Deterministic => "nlu",
            RoutePath::Knowledge => "rag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteDecision {
    pub path: RoutePath,
    /// Set on the deterministic path only.
    pub intent: Option<String>,
    pub confidence: f64,
}

/// Knowledge intents always go to retrieval; other intents take the
/// template path when `confidence >= tau`.
pub fn route(classified: &Classified, tau: f64, knowledge_intents: &BTreeSet<String>) -> RouteDecision {
    let confidence = classified.prediction.confidence;
    if !knowledge_intents.contains(&classified.intent) && confidence >= tau {
        RouteDecision {
            path: RoutePath::Deterministic,
            intent: Some(classified.intent.clone()),
            confidence,
        }
    } else {
        RouteDecision {
            path: RoutePath::Knowledge,
            intent: None,
            confidence,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("templates line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("intents without a template: {}", .0.join(", "))]
    Missing(Vec<String>),
}

/// Response text per (intent, script). The script column is `arabic`,
/// `latin` or `*` for a script-independent default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemplateRegistry {
    by_key: BTreeMap<(String, Option<Script>), String>,
}

impl TemplateRegistry {
    pub fn parse(content: &str) -> Result<Self, TemplateError> {
        let mut reg = Self::default();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| TemplateError::Malformed { line: idx + 1, message };
            let mut cols = line.splitn(3, '\t');
            let (Some(intent), Some(script), Some(text)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(malformed("expected `intent<TAB>script<TAB>template`".into()));
            };
            let intent = intent.trim();
            let text = text.trim();
            if intent.is_empty() || text.is_empty() {
                return Err(malformed("empty intent or template".into()));
            }
            let script = match script.trim() {
                "*" => None,
                s => Some(s.parse::<Script>().map_err(|e| malformed(e.to_string()))?),
            };
            reg.by_key.insert((intent.to_string(), script), text.to_string());
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }

    pub fn insert(&mut self, intent: &str, script: Option<Script>, text: &str) {
        self.by_key.insert((intent.to_string(), script), text.to_string());
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// The template for `script`, else the default, else any template of
    /// the intent.
    pub fn render(&self, intent: &str, script: Script) -> Option<&str> {
        self.by_key
            .get(&(intent.to_string(), Some(script)))
            .or_else(|| self.by_key.get(&(intent.to_string(), None)))
            .or_else(|| self.by_key.iter().find(|((i, _), _)| i == intent).map(|(_, t)| t))
            .map(String::as_str)
    }

    /// Check that every intent outside the knowledge set has a template.
    pub fn validate<'a>(
        &self,
        intents: impl IntoIterator<Item = &'a str>,
        knowledge_intents: &BTreeSet<String>,
    ) -> Result<(), TemplateError> {
        let missing: Vec<String> = intents
            .into_iter()
            .filter(|i| !knowledge_intents.contains(*i) && self.render(i, Script::Latin).is_none())
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(TemplateError::Missing(missing))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Turn {
    pub user_text: String,
    pub reply: String,
    pub route: RouteDecision,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DialogueSession {
    pub id: String,
    pub created_ms: u64,
    history: Vec<Turn>,
}

impl DialogueSession {
    fn new(id: &str) -> Self {
        Self {
            id: id.to_string(),
            created_ms: now_ms(),
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    pub fn push(&mut self, turn: Turn) {
        self.history.push(turn);
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug)]
struct SessionSlot {
    session: Arc<Mutex<DialogueSession>>,
    last_active: Instant,
}

/// In-memory sessions with idle-time eviction. Each session has its own
/// lock, so turns of one session run one at a time.
#[derive(Debug)]
pub struct SessionStore {
    slots: Mutex<HashMap<String, SessionSlot>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            slots: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    fn slots(&self) -> MutexGuard<'_, HashMap<String, SessionSlot>> {
        self.slots.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// The session for `id`, created on first use; evicts idle sessions.
    pub fn get_or_create(&self, id: &str) -> Arc<Mutex<DialogueSession>> {
        self.get_or_create_at(id, Instant::now())
    }

    pub fn get_or_create_at(&self, id: &str, now: Instant) -> Arc<Mutex<DialogueSession>> {
        let mut slots = self.slots();
        let ttl = self.ttl;
        slots.retain(|_, s| now.saturating_duration_since(s.last_active) < ttl);
        let slot = slots.entry(id.to_string()).or_insert_with(|| SessionSlot {
            session: Arc::new(Mutex::new(DialogueSession::new(id))),
            last_active: now,
        });
        slot.last_active = now;
        slot.session.clone()
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<DialogueSession>>> {
        self.slots().get(id).map(|s| s.session.clone())
    }

    pub fn len(&self) -> usize {
        self.slots().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterConfig {
    pub tau: f64,
    pub knowledge_intents: BTreeSet<String>,
    pub rag: RagConfig,
    pub session_ttl: Duration,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            knowledge_intents: BTreeSet::new(),
            rag: RagConfig::default(),
            session_ttl: DEFAULT_SESSION_TTL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BotReply {
    pub text: String,
    pub route: RouteDecision,
    /// Intent predicted by the classifier, whichever path was taken.
    pub predicted_intent: String,
    pub script: Script,
    /// Chunk ids on the knowledge path; empty on the deterministic path.
    pub sources: Vec<String>,
    pub grounded: bool,
    pub latencies: StageLatencies,
}

#[derive(Debug, thiserror::Error)]
pub enum TurnError {
    #[error("text is empty")]
    EmptyText,
    #[error("classification failed: {0}")]
    Classify(#[from] ClassifyError),
}

/// Everything a turn needs: classifier, templates, knowledge and providers.
pub struct Engine {
    classifier: Arc<IntentClassifier>,
    templates: TemplateRegistry,
    knowledge: Arc<KnowledgeStore>,
    embedder: Arc<dyn EmbeddingProvider>,
    generator: Arc<dyn Generator>,
    config: RouterConfig,
    sessions: SessionStore,
}

impl Engine {
    pub fn new(
        classifier: Arc<IntentClassifier>,
        templates: TemplateRegistry,
        knowledge: Arc<KnowledgeStore>,
        embedder: Arc<dyn EmbeddingProvider>,
        generator: Arc<dyn Generator>,
        config: RouterConfig,
    ) -> Result<Self, TemplateError> {
        templates.validate(classifier.codec().names().iter().map(String::as_str), &config.knowledge_intents)?;
        let sessions = SessionStore::new(config.session_ttl);
        Ok(Self {
            classifier,
            templates,
            knowledge,
            embedder,
            generator,
            config,
            sessions,
        })
    }

    pub fn classifier(&self) -> &IntentClassifier {
        &self.classifier
    }

    pub fn knowledge(&self) -> &Arc<KnowledgeStore> {
        &self.knowledge
    }

    pub fn embedder(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.embedder
    }

    pub fn config(&self) -> &RouterConfig {
        &self.config
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    /// Route and answer one utterance without touching any session.
    pub fn respond(&self, text: &str) -> Result<BotReply, TurnError> {
        if text.trim().is_empty() {
            return Err(TurnError::EmptyText);
        }
        let mut latencies = StageLatencies::new();
        let classified = self.classifier.classify_timed(text, &mut latencies)?;
        let decision = latencies.time("route", || route(&classified, self.config.tau, &self.config.knowledge_intents));
        let script = classified.normalized.script;
        let (reply, sources, grounded) = match decision.path {
            RoutePath::Deterministic => {
                let intent = decision.intent.as_deref().expect("deterministic routes carry an intent");
                let text = latencies.time("template", || {
                    self.templates.render(intent, script).expect("templates validated at construction").to_string()
                });
                (text, Vec::new(), true)
            }
            RoutePath::Knowledge => {
                let kb = self.knowledge.snapshot();
                let outcome = answer_question(
                    text,
                    script,
                    self.embedder.as_ref(),
                    &kb,
                    self.generator.as_ref(),
                    &self.config.rag,
                    &mut latencies,
                );
                (outcome.answer.text, outcome.answer.sources, outcome.answer.grounded)
            }
        };
        Ok(BotReply {
            text: reply,
            route: decision,
            predicted_intent: classified.intent,
            script,
            sources,
            grounded,
            latencies,
        })
    }

    /// Answer a turn and append it to the session. Turns of one session are
    /// serialized by the session lock.
    pub fn handle_turn(&self, session_id: &str, text: &str) -> Result<BotReply, TurnError> {
        let session = self.sessions.get_or_create(session_id);
        let mut session = session.lock().unwrap_or_else(|e| e.into_inner());
        let reply = self.respond(text)?;
        session.push(Turn {
            user_text: text.to_string(),
            reply: reply.text.clone(),
            route: reply.route.clone(),
            timestamp_ms: now_ms(),
        });
        Ok(reply)
    }
}
