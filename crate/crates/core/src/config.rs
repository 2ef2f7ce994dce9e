//! Engine configuration as flat `key = value` text.
//!
//! Lines starting with `#` are comments. Lists are comma-separated; an
//! empty value clears an optional path or list. Unknown keys are errors.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::classify::{LogRegConfig, MlpConfig};
use crate::embed::{ProviderConfig, MIN_DIM};
use crate::ingest::{ChunkerConfig, DEFAULT_MAX_CHUNK_CHARS};
use crate::pipeline::TrainOptions;
use crate::rag::{GeneratorConfig, RagConfig};
use crate::router::{RouterConfig, DEFAULT_SESSION_TTL, DEFAULT_TAU};
use crate::vecindex::HnswParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("{key}: invalid value {value:?}: {message}")]
    BadValue { key: String, value: String, message: String },
    #[error("{key} = {value} is out of range: {message}")]
    OutOfRange { key: String, value: String, message: String },
    #[error("{key}: {path} does not exist")]
    MissingPath { key: &'static str, path: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub models_dir: PathBuf,
    pub index_dir: PathBuf,
    pub templates: PathBuf,
    pub lexicon: Option<PathBuf>,
    pub knowledge_docs: Vec<PathBuf>,

    pub tau: f64,
    pub knowledge_intents: BTreeSet<String>,
    pub session_ttl_secs: u64,
    pub rag: RagConfig,

    pub offers: Vec<String>,
    pub max_chunk_chars: usize,

    pub embed: ProviderConfig,
    pub generator: GeneratorConfig,
    pub index: HnswParams,

    pub bind: String,
    pub port: u16,

    pub min_per_intent: usize,
    pub balance_seed: u64,
    pub split_seed: u64,
    pub min_df: u64,
    pub logreg: LogRegConfig,
    pub mlp_enabled: bool,
    pub mlp: MlpConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let defaults = TrainOptions::default();
        Self {
            models_dir: PathBuf::from("artifacts/models"),
            index_dir: PathBuf::from("artifacts/index"),
            templates: PathBuf::from("crates/core/data/templates.tsv"),
            lexicon: None,
            knowledge_docs: Vec::new(),
            tau: DEFAULT_TAU,
            knowledge_intents: BTreeSet::new(),
            session_ttl_secs: DEFAULT_SESSION_TTL.as_secs(),
            rag: RagConfig::default(),
            offers: Vec::new(),
            max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS,
            embed: ProviderConfig::default(),
            generator: GeneratorConfig::default(),
            index: HnswParams::default(),
            bind: "127.0.0.1".into(),
            port: 8080,
            min_per_intent: defaults.min_per_intent,
            balance_seed: defaults.balance_seed,
            split_seed: defaults.split_seed,
            min_df: defaults.min_df,
            logreg: defaults.logreg,
            mlp_enabled: false,
            mlp: MlpConfig::default(),
        }
    }
}

fn list<S: AsRef<str>>(items: impl IntoIterator<Item = S>) -> String {
    items.into_iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>().join(",")
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        message: e.to_string(),
    })
}

impl EngineConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Path| p.display().to_string();
        let (lr, mlp) = (&self.logreg, &self.mlp);
        vec![
            ("paths.models_dir", path(&self.models_dir)),
            ("paths.index_dir", path(&self.index_dir)),
            ("paths.templates", path(&self.templates)),
            ("paths.lexicon", self.lexicon.as_deref().map(path).unwrap_or_default()),
            ("paths.knowledge_docs", list(self.knowledge_docs.iter().map(|p| path(p)))),
            ("router.tau", self.tau.to_string()),
            ("router.knowledge_intents", list(&self.knowledge_intents)),
            ("router.session_ttl_secs", self.session_ttl_secs.to_string()),
            ("rag.k1", self.rag.k1.to_string()),
            ("rag.k2", self.rag.k2.to_string()),
            ("rag.alpha", self.rag.alpha.to_string()),
            ("rag.min_score", self.rag.min_score.to_string()),
            ("rag.max_tokens", self.rag.max_tokens.to_string()),
            ("rag.fallback_text", self.rag.fallback_text.clone()),
            ("ingest.offers", list(&self.offers)),
            ("ingest.max_chunk_chars", self.max_chunk_chars.to_string()),
            ("embed.kind", self.embed.kind.to_string()),
            ("embed.endpoint", self.embed.endpoint.clone()),
            ("embed.dim", self.embed.dim.to_string()),
            ("embed.timeout_ms", self.embed.timeout_ms.to_string()),
            ("embed.seed", self.embed.seed.to_string()),
            ("embed.max_in_flight", self.embed.max_in_flight.to_string()),
            ("generate.kind", self.generator.kind.to_string()),
            ("generate.endpoint", self.generator.endpoint.clone()),
            ("generate.timeout_ms", self.generator.timeout_ms.to_string()),
            ("generate.max_in_flight", self.generator.max_in_flight.to_string()),
            ("generate.delay_ms", self.generator.delay_ms.to_string()),
            ("index.m", self.index.m.to_string()),
            ("index.ef_construction", self.index.ef_construction.to_string()),
            ("index.ef_search", self.index.ef_search.to_string()),
            ("index.seed", self.index.seed.to_string()),
            ("server.bind", self.bind.clone()),
            ("server.port", self.port.to_string()),
            ("train.min_per_intent", self.min_per_intent.to_string()),
            ("train.balance_seed", self.balance_seed.to_string()),
            ("train.split_seed", self.split_seed.to_string()),
            ("train.min_df", self.min_df.to_string()),
            ("train.lambda", lr.lambda.to_string()),
            ("train.learning_rate", lr.learning_rate.to_string()),
            ("train.batch_size", lr.batch_size.to_string()),
            ("train.max_epochs", lr.max_epochs.to_string()),
            ("train.patience", lr.patience.to_string()),
            ("train.seed", lr.seed.to_string()),
            ("mlp.enabled", self.mlp_enabled.to_string()),
            ("mlp.hidden", format!("{},{}", mlp.hidden.0, mlp.hidden.1)),
            ("mlp.dropout", mlp.dropout.to_string()),
            ("mlp.learning_rate", mlp.learning_rate.to_string()),
            ("mlp.momentum", mlp.momentum.to_string()),
            ("mlp.batch_size", mlp.batch_size.to_string()),
            ("mlp.max_epochs", mlp.max_epochs.to_string()),
            ("mlp.patience", mlp.patience.to_string()),
            ("mlp.seed", mlp.seed.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        let lr = &mut self.logreg;
        let mlp = &mut self.mlp;
        match key {
            "paths.models_dir" => self.models_dir = PathBuf::from(value),
            "paths.index_dir" => self.index_dir = PathBuf::from(value),
            "paths.templates" => self.templates = PathBuf::from(value),
            "paths.lexicon" => self.lexicon = opt_path(value),
            "paths.knowledge_docs" => self.knowledge_docs = split_list(value).map(PathBuf::from).collect(),
            "router.tau" => self.tau = parse(key, value)?,
            "router.knowledge_intents" => self.knowledge_intents = split_list(value).map(str::to_string).collect(),
            "router.session_ttl_secs" => self.session_ttl_secs = parse(key, value)?,
            "rag.k1" => self.rag.k1 = parse(key, value)?,
            "rag.k2" => self.rag.k2 = parse(key, value)?,
            "rag.alpha" => self.rag.alpha = parse(key, value)?,
            "rag.min_score" => self.rag.min_score = parse(key, value)?,
            "rag.max_tokens" => self.rag.max_tokens = parse(key, value)?,
            "rag.fallback_text" => self.rag.fallback_text = value.to_string(),
            "ingest.offers" => self.offers = split_list(value).map(str::to_string).collect(),
            "ingest.max_chunk_chars" => self.max_chunk_chars = parse(key, value)?,
            "embed.kind" => self.embed.kind = parse(key, value)?,
            "embed.endpoint" => self.embed.endpoint = value.to_string(),
            "embed.dim" => self.embed.dim = parse(key, value)?,
            "embed.timeout_ms" => self.embed.timeout_ms = parse(key, value)?,
            "embed.seed" => self.embed.seed = parse(key, value)?,
            "embed.max_in_flight" => self.embed.max_in_flight = parse(key, value)?,
            "generate.kind" => self.generator.kind = parse(key, value)?,
            "generate.endpoint" => self.generator.endpoint = value.to_string(),
            "generate.timeout_ms" => self.generator.timeout_ms = parse(key, value)?,
            "generate.max_in_flight" => self.generator.max_in_flight = parse(key, value)?,
            "generate.delay_ms" => self.generator.delay_ms = parse(key, value)?,
            "index.m" => self.index.m = parse(key, value)?,
            "index.ef_construction" => self.index.ef_construction = parse(key, value)?,
            "index.ef_search" => self.index.ef_search = parse(key, value)?,
            "index.seed" => self.index.seed = parse(key, value)?,
            "server.bind" => self.bind = value.to_string(),
            "server.port" => self.port = parse(key, value)?,
            "train.min_per_intent" => self.min_per_intent = parse(key, value)?,
            "train.balance_seed" => self.balance_seed = parse(key, value)?,
            "train.split_seed" => self.split_seed = parse(key, value)?,
            "train.min_df" => self.min_df = parse(key, value)?,
            "train.lambda" => lr.lambda = parse(key, value)?,
            "train.learning_rate" => lr.learning_rate = parse(key, value)?,
            "train.batch_size" => lr.batch_size = parse(key, value)?,
            "train.max_epochs" => lr.max_epochs = parse(key, value)?,
            "train.patience" => lr.patience = parse(key, value)?,
            "train.seed" => lr.seed = parse(key, value)?,
            "mlp.enabled" => self.mlp_enabled = parse(key, value)?,
            "mlp.hidden" => {
                let dims: Vec<usize> = split_list(value).map(|v| parse(key, v)).collect::<Result<_, _>>()?;
                let [h1, h2] = dims[..] else {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: value.into(),
                        message: "expected two sizes".into(),
                    });
                };
                mlp.hidden = (h1, h2);
            }
            "mlp.dropout" => mlp.dropout = parse(key, value)?,
            "mlp.learning_rate" => mlp.learning_rate = parse(key, value)?,
            "mlp.momentum" => mlp.momentum = parse(key, value)?,
            "mlp.batch_size" => mlp.batch_size = parse(key, value)?,
            "mlp.max_epochs" => mlp.max_epochs = parse(key, value)?,
            "mlp.patience" => mlp.patience = parse(key, value)?,
            "mlp.seed" => mlp.seed = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn parse(content: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (idx, line) in content.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                message: "expected `key = value`".into(),
            })?;
            config.set(key.trim(), value)?;
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }

    /// The full effective configuration; parsing it yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let head = key.split('.').next().unwrap_or_default();
            if head != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = head;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Range checks on thresholds and sizes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &str, value: impl ToString, message: &str) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange {
                    key: key.to_string(),
                    value: value.to_string(),
                    message: message.to_string(),
                })
            }
        }
        check((0.0..=1.0).contains(&self.tau), "router.tau", self.tau, "must be in [0, 1]")?;
        check((0.0..=1.0).contains(&self.rag.alpha), "rag.alpha", self.rag.alpha, "must be in [0, 1]")?;
        check((-1.0..=1.0).contains(&self.rag.min_score), "rag.min_score", self.rag.min_score, "must be in [-1, 1]")?;
        check(self.rag.k1 >= 1, "rag.k1", self.rag.k1, "must be at least 1")?;
        check((1..=self.rag.k1).contains(&self.rag.k2), "rag.k2", self.rag.k2, "must be in [1, rag.k1]")?;
        check(self.rag.max_tokens >= 1, "rag.max_tokens", self.rag.max_tokens, "must be at least 1")?;
        check(!self.rag.fallback_text.is_empty(), "rag.fallback_text", "", "must not be empty")?;
        check(self.max_chunk_chars >= 64, "ingest.max_chunk_chars", self.max_chunk_chars, "must be at least 64")?;
        check(self.embed.dim >= MIN_DIM, "embed.dim", self.embed.dim, "must be at least 8")?;
        check(self.index.m >= 2, "index.m", self.index.m, "must be at least 2")?;
        check(self.index.ef_search >= 1, "index.ef_search", self.index.ef_search, "must be at least 1")?;
        check(self.min_per_intent >= 3, "train.min_per_intent", self.min_per_intent, "must be at least 3")?;
        check(self.min_df >= 1, "train.min_df", self.min_df, "must be at least 1")?;
        check(self.logreg.learning_rate > 0.0, "train.learning_rate", self.logreg.learning_rate, "must be positive")?;
        check(self.logreg.lambda >= 0.0, "train.lambda", self.logreg.lambda, "must be non-negative")?;
        check(self.logreg.batch_size >= 1, "train.batch_size", self.logreg.batch_size, "must be at least 1")?;
        check((0.0..1.0).contains(&self.mlp.dropout), "mlp.dropout", self.mlp.dropout, "must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.mlp.momentum), "mlp.momentum", self.mlp.momentum, "must be in [0, 1)")?;
        check(self.mlp.batch_size >= 1, "mlp.batch_size", self.mlp.batch_size, "must be at least 1")?;
        Ok(())
    }

    /// Check the artifacts the server loads at startup.
    pub fn validate_serve_paths(&self) -> Result<(), ConfigError> {
        let need = |key: &'static str, p: &Path| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::MissingPath {
                    key,
                    path: p.display().to_string(),
                })
            }
        };
        need("paths.models_dir", &self.models_dir)?;
        need("paths.templates", &self.templates)?;
        if let Some(lex) = &self.lexicon {
            need("paths.lexicon", lex)?;
        }
        for doc in &self.knowledge_docs {
            need("paths.knowledge_docs", doc)?;
        }
        Ok(())
    }

    pub fn router_config(&self) -> RouterConfig {
        RouterConfig {
            tau: self.tau,
            knowledge_intents: self.knowledge_intents.clone(),
            rag: self.rag.clone(),
            session_ttl: Duration::from_secs(self.session_ttl_secs),
        }
    }

    pub fn chunker_config(&self) -> ChunkerConfig {
        ChunkerConfig {
            max_chunk_chars: self.max_chunk_chars,
            ..ChunkerConfig::with_offers(self.offers.clone())
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            min_per_intent: self.min_per_intent,
            balance_seed: self.balance_seed,
            ratios: [0.8, 0.1, 0.1],
            split_seed: self.split_seed,
            n_range: (3, 4),
            min_df: self.min_df,
            logreg: self.logreg.clone(),
            mlp: self.mlp_enabled.then(|| self.mlp.clone()),
        }
    }
}
