//! Command-line interface. Exit codes: 0 success, 1 usage, 2 data error,
//! 3 runtime error.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use darja_core::config::EngineConfig;
use darja_core::corpus::{dataset_stats, load_dataset, Dataset};
use darja_core::ingest::KnowledgeBase;
use darja_core::normalize::{normalize_text, Script};
use darja_core::pipeline::{evaluate_dataset, train_pipeline, IntentClassifier, MLP_MODEL_FILE, MODEL_FILE};
use darja_core::router::RoutePath;
use darja_core::synth::{generate, SynthConfig};

use crate::{app, bench, server, CliError};

#[derive(Debug, Parser)]
#[command(name = "darja", version, about = "Darja intent routing and grounded answers")]
pub struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Balance, split, fit features, train and evaluate; write model files.
    Train(TrainArgs),
    /// Evaluate saved models on a labeled dataset.
    Eval(EvalArgs),
    /// Chunk and index documents into the index directory.
    Ingest(IngestArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Chat on stdin, one utterance per line.
    Chat(ChatArgs),
    /// Per-stage latency report for both routing paths with mock providers.
    Bench(BenchArgs),
    /// Normalize text from the arguments or stdin.
    Normalize(NormalizeArgs),
    /// Per-intent counts of a dataset.
    Stats(DataArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScriptArg {
    Latin,
    Arabic,
}

impl From<ScriptArg> for Script {
    fn from(s: ScriptArg) -> Self {
        match s {
            ScriptArg::Latin => Script::Latin,
            ScriptArg::Arabic => Script::Arabic,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
pub struct Source {
    /// `intent<TAB>text` file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the bundled synthetic generator instead of a file.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum, default_value = "latin")]
    pub script: ScriptArg,
    /// Seed of the synthetic generator.
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset, CliError> {
        match &self.source.data {
            Some(path) => load_dataset(path, self.script.into()).map_err(|e| CliError::data(anyhow!("dataset: {e}"))),
            None => Ok(generate(&SynthConfig {
                seed: self.seed,
                ..SynthConfig::default()
            })),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Also train the MLP head.
    #[arg(long)]
    pub mlp: bool,
    /// Output directory; defaults to `paths.models_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Head {
    Logreg,
    Mlp,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "logreg")]
    pub model: Head,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Documents to index; defaults to `paths.knowledge_docs`.
    pub files: Vec<PathBuf>,
    /// Add to the existing index instead of starting fresh.
    #[arg(long)]
    pub append: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[arg(long, default_value = "cli")]
    pub session: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Deterministic-path queries.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Knowledge-path queries; capped at `n`.
    #[arg(long, default_value_t = 20)]
    pub rag_n: usize,
    /// Artificial generation delay of the mock generator.
    #[arg(long, default_value_t = 500)]
    pub delay_ms: u64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    /// Texts to normalize; stdin lines when none are given.
    pub texts: Vec<String>,
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(CliError::runtime)
}

fn train(config: &EngineConfig, args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = args.data.load()?;
    let lexicon = app::load_lexicon(config)?;
    let mut options = config.train_options();
    if args.mlp {
        options.mlp = Some(config.mlp.clone());
    }
    let outcome = train_pipeline(&dataset, &lexicon, &options).map_err(|e| CliError::data(anyhow!("training: {e}")))?;
    let dir = args.out.clone().unwrap_or_else(|| config.models_dir.clone());
    outcome.save(&dir).map_err(|e| CliError::runtime(anyhow!("saving models: {e}")))?;
    write_out(out, &outcome.report())?;
    write_out(out, &format!("models written to {}\n", dir.display()))
}

fn eval(config: &EngineConfig, args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file = match args.model {
        Head::Logreg => MODEL_FILE,
        Head::Mlp => MLP_MODEL_FILE,
    };
    let classifier = IntentClassifier::load_as(&config.models_dir, file)
        .map_err(|e| CliError::data(anyhow!("loading models from {}: {e}", config.models_dir.display())))?;
    let dataset = args.data.load()?;
    let metrics = evaluate_dataset(&classifier, &dataset).map_err(|e| CliError::data(anyhow!("evaluation: {e}")))?;
    write_out(out, &metrics.report())
}

fn ingest(config: &EngineConfig, args: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let paths = if args.files.is_empty() { &config.knowledge_docs } else { &args.files };
    if paths.is_empty() {
        return Err(CliError::Usage("no documents given and paths.knowledge_docs is empty".into()));
    }
    let embedder = app::embedder(config)?;
    let docs = app::read_documents(paths)?;
    let base = if args.append && KnowledgeBase::is_saved_in(&config.index_dir) {
        app::load_knowledge(config, embedder.as_ref())?
    } else {
        KnowledgeBase::empty(embedder.dim(), config.index)
    };
    let chunker = config.chunker_config();
    let mut kb = base;
    for doc in &docs {
        let (next, count) = kb
            .with_document(doc, &chunker, embedder.as_ref())
            .map_err(|e| CliError::runtime(anyhow!("ingesting {}: {e}", doc.id)))?;
        write_out(out, &format!("{}\t{count} chunks\n", doc.id))?;
        kb = next;
    }
    kb.save(&config.index_dir)
        .map_err(|e| CliError::runtime(anyhow!("saving index: {e}")))?;
    write_out(out, &format!("{} chunks in {}\n", kb.len(), config.index_dir.display()))
}

fn chat(config: &EngineConfig, args: &ChatArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let engine = app::build_engine(config)?;
    for line in input.lines() {
        let line = line.map_err(CliError::runtime)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if matches!(text, "/quit" | "/exit") {
            break;
        }
        let reply = engine
            .handle_turn(&args.session, text)
            .map_err(|e| CliError::runtime(anyhow!("{e}")))?;
        let label = match reply.route.path {
            RoutePath::Deterministic => format!("nlu {:.2} {}", reply.route.confidence, reply.predicted_intent),
            RoutePath::Knowledge => format!("rag {:.2}", reply.route.confidence),
        };
        let mut line = format!("[{label}] {}", reply.text);
        if !reply.sources.is_empty() {
            line.push_str(&format!("  (sources: {})", reply.sources.join(", ")));
        }
        write_out(out, &format!("{line}\n"))?;
        out.flush().map_err(CliError::runtime)?;
    }
    Ok(())
}

fn run_bench(config: &EngineConfig, args: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let report = if args.n == 0 {
        bench::BenchReport::default()
    } else {
        let classifier = Arc::new(app::load_classifier(config)?);
        let engine = bench::mock_engine(config, classifier, Duration::from_millis(args.delay_ms))?;
        let (deterministic, knowledge) = bench::default_queries();
        bench::run_bench(&engine, &deterministic, &knowledge, args.n, args.rag_n.min(args.n))
    };
    let text = report.render();
    if let Some(path) = &args.out {
        std::fs::write(path, &text).map_err(|e| CliError::runtime(anyhow!("{}: {e}", path.display())))?;
    }
    write_out(out, &text)
}

fn normalize(args: &NormalizeArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let mut emit = |text: &str| {
        let n = normalize_text(text);
        write_out(out, &format!("{}\t{}\n", n.script, n.text))
    };
    if args.texts.is_empty() {
        for line in input.lines() {
            emit(&line.map_err(CliError::runtime)?)?;
        }
    } else {
        for text in &args.texts {
            emit(text)?;
        }
    }
    Ok(())
}

fn stats(args: &DataArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dataset = args.load()?;
    let s = dataset_stats(&dataset).map_err(|e| CliError::data(anyhow!("dataset: {e}")))?;
    let mut text = format!(
        "examples\t{}\nintents\t{}\nmean\t{:.2}\nmedian\t{}\nmin\t{}\nmax\t{}\n\n",
        s.total, s.intents, s.mean, s.median, s.min, s.max
    );
    for (intent, n) in dataset.intent_counts() {
        text.push_str(&format!("{intent}\t{n}\n"));
    }
    write_out(out, &text)
}

/// Run a parsed command.
pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = app::load_config(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::Train(args) => train(&config, args, out),
        Command::Eval(args) => eval(&config, args, out),
        Command::Ingest(args) => ingest(&config, args, out),
        Command::Serve(args) => {
            if let Some(bind) = &args.bind {
                config.bind = bind.clone();
            }
            if let Some(port) = args.port {
                config.port = port;
            }
            server::run(&config)
        }
        Command::Chat(args) => chat(&config, args, input, out),
        Command::Bench(args) => run_bench(&config, args, out),
        Command::Normalize(args) => normalize(args, input, out),
        Command::Stats(args) => stats(args, out),
        Command::Config => write_out(out, &config.to_text()),
    }
}

/// Parse `args`, run and return the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut stdout = std::io::stdout();
    match execute(cli, &mut input, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
