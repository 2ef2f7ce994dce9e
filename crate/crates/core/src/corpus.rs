//! Labeled utterance datasets: loading, label encoding, stratified splits and
//! synonym-based balancing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::normalize::{normalize, RawUtterance, Script};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Script(#[from] crate::normalize::UnknownScript),
    #[error("dataset is empty")]
    Empty,
    #[error("intent {intent:?} has {count} examples; at least 3 are required, run balancing first")]
    TooFewExamples { intent: String, count: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("minimum per intent must be at least 3, got {0}")]
    BadMinimum(usize),
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("lexicon maps {0:?} to itself")]
    SelfSynonym(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub utterance: RawUtterance,
    pub intent: String,
    pub augmented: bool,
}

impl LabeledExample {
    pub fn new(intent: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            utterance: RawUtterance::new(text),
            intent: intent.into(),
            augmented: false,
        }
    }

    pub fn text(&self) -> &str {
        &self.utterance.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub script: Script,
}

impl Dataset {
    pub fn new(examples: Vec<LabeledExample>, script: Script) -> Self {
        Self { examples, script }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Examples grouped by intent, intents in lexicographic order, examples
    /// in dataset order.
    pub fn by_intent(&self) -> BTreeMap<&str, Vec<&LabeledExample>> {
        let mut map: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
        for ex in &self.examples {
            map.entry(ex.intent.as_str()).or_default().push(ex);
        }
        map
    }

    pub fn intent_counts(&self) -> BTreeMap<String, usize> {
        self.by_intent()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.len()))
            .collect()
    }

    /// Parse `intent<TAB>text` lines. Blank lines are skipped.
    pub fn parse(content: &str, script: Script) -> Result<Self, CorpusError> {
        let mut examples = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let Some((intent, text)) = line.split_once('\t') else {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "expected `intent<TAB>text`, found no tab".into(),
                });
            };
            let intent = intent.trim();
            if intent.is_empty() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "empty intent name".into(),
                });
            }
            if normalize(&RawUtterance::new(text)).text.is_empty() {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "utterance is empty after normalization".into(),
                });
            }
            examples.push(LabeledExample {
                utterance: RawUtterance::tagged(text, format!("line:{line_no}")),
                intent: intent.to_string(),
                augmented: false,
            });
        }
        Ok(Self { examples, script })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            let _ = writeln!(out, "{}\t{}", ex.intent, ex.utterance.text);
        }
        out
    }
}

pub fn load_dataset(path: impl AsRef<Path>, script: Script) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Dataset::parse(&content, script)
}

/// Bijection between intent names and dense ids, ids assigned in
/// lexicographic name order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCodec {
    names: Vec<String>,
}

impl LabelCodec {
    pub fn from_names<I, S>(names: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(CorpusError::Empty);
        }
        Ok(Self {
            names: set.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn encode(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn decode(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `intent<TAB>id` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{id}");
        }
        out
    }

    pub fn parse_tsv(content: &str) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: &str| CorpusError::Malformed {
                line: idx + 1,
                message: message.to_string(),
            };
            let (name, id) = line.split_once('\t').ok_or_else(|| malformed("expected `intent<TAB>id`"))?;
            let id: usize = id.trim().parse().map_err(|_| malformed("id is not an integer"))?;
            pairs.push((id, name.to_string()));
        }
        pairs.sort();
        let codec = Self::from_names(pairs.iter().map(|(_, n)| n.clone()))?;
        for (id, name) in &pairs {
            if codec.encode(name) != Some(*id) {
                return Err(CorpusError::Malformed {
                    line: 0,
                    message: format!("label file does not hold a lexicographic bijection at {name:?}"),
                });
            }
        }
        if codec.len() != pairs.len() {
            return Err(CorpusError::Malformed {
                line: 0,
                message: "duplicate intent names in label file".into(),
            });
        }
        Ok(codec)
    }
}

pub fn fit_label_codec(dataset: &Dataset) -> Result<LabelCodec, CorpusError> {
    LabelCodec::from_names(dataset.examples.iter().map(|e| e.intent.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Allot `n` items to splits by largest-remainder rounding, with at least
/// one item per split. Requires `n >= ratios.len()`.
pub fn allot_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut counts = quotas.map(|q| (q.floor() as usize).max(1));
    let total: usize = counts.iter().sum();
    if total < n {
        let mut order: Vec<usize> = (0..3).collect();
        // Largest fractional part first; earlier split wins ties.
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - quotas[a].floor();
            let fb = quotas[b] - quotas[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for k in 0..(n - total) {
            counts[order[k % 3]] += 1;
        }
    } else {
        for _ in 0..(total - n) {
            let largest = (0..3)
                .filter(|&i| counts[i] > 1)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("n >= 3 leaves a split above the floor");
            counts[largest] -= 1;
        }
    }
    counts
}

pub fn stratified_split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split, CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if dataset.is_empty() {
        return Err(CorpusError::Empty);
    }
    let groups = dataset.by_intent();
    if let Some((intent, exs)) = groups.iter().find(|(_, v)| v.len() < 3) {
        return Err(CorpusError::TooFewExamples {
            intent: intent.to_string(),
            count: exs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for exs in groups.values() {
        let mut shuffled: Vec<&LabeledExample> = exs.clone();
        shuffled.shuffle(&mut rng);
        let counts = allot_counts(shuffled.len(), ratios);
        let mut it = shuffled.into_iter();
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend(it.by_ref().take(count).cloned());
        }
    }
    let [train, val, test] = parts.map(|examples| Dataset::new(examples, dataset.script));
    Ok(Split { train, val, test })
}

/// Token → replacement tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, token: &str, replacements: I) -> Result<(), CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entry = self.entries.entry(token.to_string()).or_default();
        for r in replacements {
            let r = r.into();
            if r == token {
                return Err(CorpusError::SelfSynonym(token.to_string()));
            }
            entry.insert(r);
        }
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&BTreeSet<String>> {
        self.entries
            .get(token)
            .or_else(|| self.entries.get(&token.to_lowercase()))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `token<TAB>r1,r2,...` lines.
    pub fn parse(content: &str) -> Result<Self, CorpusError> {
        let mut lex = Self::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (token, reps) = line.split_once('\t').ok_or_else(|| CorpusError::Malformed {
                line: idx + 1,
                message: "expected `token<TAB>replacement,...`".into(),
            })?;
            let reps = reps.split(',').map(str::trim).filter(|r| !r.is_empty());
            lex.insert(token.trim(), reps)?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&content)
    }
}

/// Single-token synonym variants of `example`, by token position then
/// replacement order. The original is not included.
pub fn augment_synonyms(example: &LabeledExample, lexicon: &SynonymLexicon, max_variants: usize) -> Vec<LabeledExample> {
    let tokens: Vec<&str> = example.text().split_whitespace().collect();
    let mut out = Vec::new();
    for (pos, tok) in tokens.iter().enumerate() {
        let Some(reps) = lexicon.get(tok) else { continue };
        for rep in reps {
            if out.len() == max_variants {
                return out;
            }
            let text = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| if i == pos { rep.as_str() } else { t })
                .collect::<Vec<_>>()
                .join(" ");
            out.push(LabeledExample {
                utterance: RawUtterance {
                    text,
                    source_tag: Some("synonym".into()),
                },
                intent: example.intent.clone(),
                augmented: true,
            });
        }
    }
    out
}

/// Raise every intent to at least `min_per_intent` examples: synonym
/// variants first, then seeded duplicates.
pub fn balance_dataset(
    dataset: &Dataset,
    min_per_intent: usize,
    lexicon: &SynonymLexicon,
    seed: u64,
) -> Result<Dataset, CorpusError> {
    if min_per_intent < 3 {
        return Err(CorpusError::BadMinimum(min_per_intent));
    }
    if dataset.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut appended = Vec::new();
    for exs in dataset.by_intent().values() {
        let mut missing = min_per_intent.saturating_sub(exs.len());
        if missing == 0 {
            continue;
        }
        let mut seen: BTreeSet<&str> = exs.iter().map(|e| e.text()).collect();
        let mut variants = Vec::new();
        for ex in exs {
            for v in augment_synonyms(ex, lexicon, usize::MAX) {
                if variants.len() == missing {
                    break;
                }
                if !seen.contains(v.text()) && !variants.iter().any(|w: &LabeledExample| w.text() == v.text()) {
                    variants.push(v);
                }
            }
        }
        missing -= variants.len();
        appended.extend(variants);
        for _ in 0..missing {
            let pick = exs[rng.random_range(0..exs.len())];
            appended.push(LabeledExample {
                utterance: RawUtterance {
                    text: pick.utterance.text.clone(),
                    source_tag: Some("duplicate".into()),
                },
                intent: pick.intent.clone(),
                augmented: true,
            });
        }
        seen.clear();
    }
    let mut examples = dataset.examples.clone();
    examples.extend(appended);
    Ok(Dataset::new(examples, dataset.script))
}

/// Per-intent count summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub intents: usize,
    pub mean: f64,
    pub median: f64,
    pub min: usize,
    pub max: usize,
}

pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats, CorpusError> {
    let mut counts: Vec<usize> = dataset.intent_counts().into_values().collect();
    if counts.is_empty() {
        return Err(CorpusError::Empty);
    }
    counts.sort_unstable();
    let n = counts.len();
    let median = if n % 2 == 1 {
        counts[n / 2] as f64
    } else {
        (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0
    };
    Ok(DatasetStats {
        total: dataset.len(),
        intents: n,
        mean: dataset.len() as f64 / n as f64,
        median,
        min: counts[0],
        max: counts[n - 1],
    })
}
