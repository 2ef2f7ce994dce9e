//! Engine assembly from an [`EngineConfig`].

use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use darja_core::config::EngineConfig;
use darja_core::corpus::SynonymLexicon;
use darja_core::embed::{build_embedder, EmbeddingProvider};
use darja_core::ingest::{KnowledgeBase, KnowledgeStore, SourceDocument};
use darja_core::pipeline::IntentClassifier;
use darja_core::rag::{build_generator, Generator};
use darja_core::router::{Engine, TemplateRegistry};

use crate::CliError;

/// Read a config file, apply `key=value` overrides and validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<EngineConfig, CliError> {
    let mut config = match path {
        Some(p) => EngineConfig::load(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?,
        None => EngineConfig::default(),
    };
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        config.set(key.trim(), value).map_err(|e| CliError::Usage(format!("--set {item}: {e}")))?;
    }
    config.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
    Ok(config)
}

pub fn load_lexicon(config: &EngineConfig) -> Result<SynonymLexicon, CliError> {
    match &config.lexicon {
        Some(path) => SynonymLexicon::load(path).map_err(|e| CliError::data(anyhow!("lexicon: {e}"))),
        None => Ok(SynonymLexicon::new()),
    }
}

pub fn load_classifier(config: &EngineConfig) -> Result<IntentClassifier, CliError> {
    IntentClassifier::load(&config.models_dir)
        .map_err(|e| CliError::data(anyhow!("loading models from {}: {e}", config.models_dir.display())))
}

pub fn embedder(config: &EngineConfig) -> Result<Arc<dyn EmbeddingProvider>, CliError> {
    build_embedder(&config.embed).map_err(|e| CliError::Usage(format!("embedding provider: {e}")))
}

pub fn generator(config: &EngineConfig) -> Result<Arc<dyn Generator>, CliError> {
    build_generator(&config.generator, config.rag.max_tokens).map_err(|e| CliError::Usage(format!("generator: {e}")))
}

/// Index the given documents into a fresh knowledge base.
pub fn build_knowledge(
    config: &EngineConfig,
    docs: &[SourceDocument],
    embedder: &dyn EmbeddingProvider,
) -> Result<KnowledgeBase, CliError> {
    let chunker = config.chunker_config();
    let mut kb = KnowledgeBase::empty(embedder.dim(), config.index);
    for doc in docs {
        let (next, count) = kb
            .with_document(doc, &chunker, embedder)
            .with_context(|| format!("ingesting {}", doc.id))
            .map_err(CliError::Runtime)?;
        log::info!("indexed {} as {count} chunks", doc.id);
        kb = next;
    }
    Ok(kb)
}

pub fn read_documents(paths: &[impl AsRef<Path>]) -> Result<Vec<SourceDocument>, CliError> {
    paths
        .iter()
        .map(|p| SourceDocument::from_path(p).map_err(|e| CliError::data(anyhow!("{e}"))))
        .collect()
}

/// The saved knowledge base in the index directory if there is one,
/// otherwise the configured documents indexed now.
pub fn load_knowledge(config: &EngineConfig, embedder: &dyn EmbeddingProvider) -> Result<KnowledgeBase, CliError> {
    if KnowledgeBase::is_saved_in(&config.index_dir) {
        let kb = KnowledgeBase::load(&config.index_dir)
            .map_err(|e| CliError::data(anyhow!("loading index from {}: {e}", config.index_dir.display())))?;
        if kb.dim() != embedder.dim() {
            return Err(CliError::data(anyhow!(
                "index in {} has dimension {}, the embedding provider has {}",
                config.index_dir.display(),
                kb.dim(),
                embedder.dim()
            )));
        }
        log::info!("loaded {} chunks from {}", kb.len(), config.index_dir.display());
        return Ok(kb);
    }
    let docs = read_documents(&config.knowledge_docs)?;
    build_knowledge(config, &docs, embedder)
}

/// Wire a classifier, knowledge and providers into an engine using the
/// templates and routing settings of `config`.
pub fn assemble(
    config: &EngineConfig,
    classifier: Arc<IntentClassifier>,
    knowledge: KnowledgeBase,
    embedder: Arc<dyn EmbeddingProvider>,
    generator: Arc<dyn Generator>,
) -> Result<Engine, CliError> {
    let templates = TemplateRegistry::load(&config.templates).map_err(|e| CliError::data(anyhow!("templates: {e}")))?;
    Engine::new(
        classifier,
        templates,
        Arc::new(KnowledgeStore::new(knowledge)),
        embedder,
        generator,
        config.router_config(),
    )
    .map_err(|e| CliError::data(anyhow!("templates {}: {e}", config.templates.display())))
}

/// Everything `serve` and `chat` need, loaded from the configured paths.
pub fn build_engine(config: &EngineConfig) -> Result<Engine, CliError> {
    config.validate_serve_paths().map_err(|e| CliError::data(anyhow!("startup: {e}")))?;
    let classifier = Arc::new(load_classifier(config)?);
    let embedder = embedder(config)?;
    let generator = generator(config)?;
    let knowledge = load_knowledge(config, embedder.as_ref())?;
    assemble(config, classifier, knowledge, embedder, generator)
}
