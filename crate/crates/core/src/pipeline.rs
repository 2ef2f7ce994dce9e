//! Training and inference composition: normalize, TF-IDF features, intent
//! classifier.

use std::path::Path;

use crate::classify::{
    evaluate, train_logreg_with_report, train_mlp_with_report, Classifier, ClassifyError, IntentModel, LogRegConfig,
    Metrics, MlpConfig, Prediction, TrainReport, TrainingSample,
};
use crate::corpus::{
    balance_dataset, fit_label_codec, stratified_split, CorpusError, Dataset, LabelCodec, SynonymLexicon,
};
use crate::features::{fit_tfidf, FeatureError, TfidfVocabulary};
use crate::normalize::{normalize, normalize_text, NormalizedUtterance};
use crate::timing::StageLatencies;

pub const VOCAB_FILE: &str = "vocab.tfv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const MODEL_FILE: &str = "model.bin";
pub const MLP_MODEL_FILE: &str = "model_mlp.bin";
pub const METRICS_FILE: &str = "metrics.txt";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("balance: {0}")]
    Balance(#[source] CorpusError),
    #[error("split: {0}")]
    Split(#[source] CorpusError),
    #[error("labels: {0}")]
    Labels(#[source] CorpusError),
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("train: {0}")]
    Train(#[source] ClassifyError),
    #[error("evaluate: {0}")]
    Evaluate(#[source] ClassifyError),
    #[error("model: {0}")]
    Model(#[source] ClassifyError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Inconsistent { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub min_per_intent: usize,
    pub balance_seed: u64,
    pub ratios: [f64; 3],
    pub split_seed: u64,
    pub n_range: (usize, usize),
    pub min_df: u64,
    pub logreg: LogRegConfig,
    /// Also train the MLP head when set.
    pub mlp: Option<MlpConfig>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            min_per_intent: 13,
            balance_seed: 42,
            ratios: [0.8, 0.1, 0.1],
            split_seed: 42,
            n_range: (3, 4),
            min_df: 1,
            logreg: LogRegConfig::default(),
            mlp: None,
        }
    }
}

/// Output of [`IntentClassifier::classify`].
#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub normalized: NormalizedUtterance,
    pub prediction: Prediction,
    pub intent: String,
}

/// Vocabulary, label codec and model, ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentClassifier {
    vocab: TfidfVocabulary,
    codec: LabelCodec,
    model: IntentModel,
}

impl IntentClassifier {
    pub fn new(vocab: TfidfVocabulary, codec: LabelCodec, model: IntentModel) -> Result<Self, PipelineError> {
        let inconsistent = |message: String| PipelineError::Inconsistent {
            path: "<memory>".into(),
            message,
        };
        if model.input_dim() != vocab.len() {
            return Err(inconsistent(format!("model input {} != vocabulary {}", model.input_dim(), vocab.len())));
        }
        if model.n_classes() != codec.len() {
            return Err(inconsistent(format!("model classes {} != labels {}", model.n_classes(), codec.len())));
        }
        Ok(Self { vocab, codec, model })
    }

    pub fn vocab(&self) -> &TfidfVocabulary {
        &self.vocab
    }

    pub fn codec(&self) -> &LabelCodec {
        &self.codec
    }

    pub fn model(&self) -> &IntentModel {
        &self.model
    }

    pub fn classify(&self, text: &str) -> Result<Classified, ClassifyError> {
        self.classify_timed(text, &mut StageLatencies::new())
    }

    /// Classify, recording the normalize, featurize and predict stages.
    pub fn classify_timed(&self, text: &str, latencies: &mut StageLatencies) -> Result<Classified, ClassifyError> {
        let normalized = latencies.time("normalize", || normalize_text(text));
        let x = latencies.time("featurize", || self.vocab.transform(&normalized.text));
        let prediction = latencies.time("predict", || self.model.predict(&x))?;
        let intent = self.codec.decode(prediction.intent).expect("model classes match the codec").to_string();
        Ok(Classified {
            normalized,
            prediction,
            intent,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        self.save_as(dir, MODEL_FILE)
    }

    /// Save with the model under `model_file`; vocabulary and labels keep
    /// their standard names.
    pub fn save_as(&self, dir: impl AsRef<Path>, model_file: &str) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.vocab.save(dir.join(VOCAB_FILE))?;
        let labels = dir.join(LABELS_FILE);
        std::fs::write(&labels, self.codec.to_tsv()).map_err(io_err(&labels))?;
        self.model.save(dir.join(model_file)).map_err(PipelineError::Model)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::load_as(dir, MODEL_FILE)
    }

    pub fn load_as(dir: impl AsRef<Path>, model_file: &str) -> Result<Self, PipelineError> {
        let dir = dir.as_ref();
        let vocab = TfidfVocabulary::load(dir.join(VOCAB_FILE))?;
        let labels = dir.join(LABELS_FILE);
        let text = std::fs::read_to_string(&labels).map_err(io_err(&labels))?;
        let codec = LabelCodec::parse_tsv(&text).map_err(PipelineError::Labels)?;
        let model = IntentModel::load(dir.join(model_file)).map_err(PipelineError::Model)?;
        Self::new(vocab, codec, model).map_err(|e| match e {
            PipelineError::Inconsistent { message, .. } => PipelineError::Inconsistent {
                path: dir.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

fn samples(dataset: &Dataset, vocab: &TfidfVocabulary, codec: &LabelCodec) -> Result<Vec<TrainingSample>, PipelineError> {
    dataset
        .examples
        .iter()
        .map(|e| {
            let label = codec
                .encode(&e.intent)
                .ok_or_else(|| PipelineError::Labels(CorpusError::UnknownIntent(e.intent.clone())))?;
            Ok(TrainingSample::new(vocab.transform(&normalize(&e.utterance).text), label))
        })
        .collect()
}

/// A trained head with its held-out metrics.
#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub classifier: IntentClassifier,
    pub metrics: Metrics,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logreg: TrainedHead,
    pub mlp: Option<TrainedHead>,
    /// Train, validation and test sizes after balancing.
    pub split_sizes: [usize; 3],
}

impl TrainOutcome {
    /// Plain-text metrics report for every trained head.
    pub fn report(&self) -> String {
        let [train, val, test] = self.split_sizes;
        let mut out = format!("split train={train} val={val} test={test}\n\n[logreg] best_epoch={}\n", self.logreg.report.best_epoch);
        out.push_str(&self.logreg.metrics.report());
        if let Some(mlp) = &self.mlp {
            out.push_str(&format!("\n[mlp] best_epoch={}\n", mlp.report.best_epoch));
            out.push_str(&mlp.metrics.report());
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
        let dir = dir.as_ref();
        self.logreg.classifier.save(dir)?;
        if let Some(mlp) = &self.mlp {
            mlp.classifier.save_as(dir, MLP_MODEL_FILE)?;
        }
        let path = dir.join(METRICS_FILE);
        std::fs::write(&path, self.report()).map_err(io_err(&path))
    }
}

/// Balance, split, fit TF-IDF on the training part, train, and evaluate on
/// the test part.
pub fn train_pipeline(
    dataset: &Dataset,
    lexicon: &SynonymLexicon,
    options: &TrainOptions,
) -> Result<TrainOutcome, PipelineError> {
    let balanced =
        balance_dataset(dataset, options.min_per_intent, lexicon, options.balance_seed).map_err(PipelineError::Balance)?;
    let split = stratified_split(&balanced, options.ratios, options.split_seed).map_err(PipelineError::Split)?;
    let codec = fit_label_codec(&balanced).map_err(PipelineError::Labels)?;
    let texts = normalized_texts(&split.train);
    let vocab = fit_tfidf(&texts, options.n_range, options.min_df)?;
    let train = samples(&split.train, &vocab, &codec)?;
    let val = samples(&split.val, &vocab, &codec)?;
    let test = samples(&split.test, &vocab, &codec)?;

    let (lr, report) = train_logreg_with_report(&train, &val, codec.len(), &options.logreg).map_err(PipelineError::Train)?;
    let model = IntentModel::Linear(lr);
    let metrics = evaluate(&model, &test, &codec).map_err(PipelineError::Evaluate)?;
    let logreg = TrainedHead {
        classifier: IntentClassifier::new(vocab.clone(), codec.clone(), model)?,
        metrics,
        report,
    };

    let mlp = match &options.mlp {
        Some(cfg) => {
            let (m, report) = train_mlp_with_report(&train, &val, codec.len(), cfg).map_err(PipelineError::Train)?;
            let model = IntentModel::Mlp(m);
            let metrics = evaluate(&model, &test, &codec).map_err(PipelineError::Evaluate)?;
            Some(TrainedHead {
                classifier: IntentClassifier::new(vocab, codec, model)?,
                metrics,
                report,
            })
        }
        None => None,
    };
    Ok(TrainOutcome {
        logreg,
        mlp,
        split_sizes: [split.train.len(), split.val.len(), split.test.len()],
    })
}

/// Evaluate a trained classifier on a labeled dataset.
pub fn evaluate_dataset(classifier: &IntentClassifier, dataset: &Dataset) -> Result<Metrics, PipelineError> {
    let test = samples(dataset, &classifier.vocab, &classifier.codec)?;
    evaluate(&classifier.model, &test, &classifier.codec).map_err(PipelineError::Evaluate)
}

/// Normalized texts of a dataset, in order.
pub fn normalized_texts(dataset: &Dataset) -> Vec<String> {
    dataset.examples.iter().map(|e| normalize(&e.utterance).text).collect()
}

