//! Character n-gram TF-IDF.
//!
//! N-grams are taken over the normalized text as-is: spaces count as
//! characters and there is no boundary padding. Weights use the smoothed
//! idf `ln((1 + N) / (1 + df)) + 1`, raw term counts, and L2 row
//! normalization.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::binio::{FormatError, Reader, Writer};

const MAGIC: &[u8; 4] = b"TFV1";

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("no text yields an n-gram of length {min_n}; vocabulary would be empty")]
    EmptyVocabulary { min_n: usize },
    #[error("invalid n-gram range ({0}, {1})")]
    BadRange(usize, usize),
    #[error("vocabulary file: {0}")]
    Format(#[from] FormatError),
    #[error("vocabulary file: stored idf for {ngram:?} is {stored}, recomputed {recomputed}")]
    IdfMismatch { ngram: String, stored: f64, recomputed: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Sparse row with strictly increasing indices and non-zero values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
    pub dim: usize,
}

impl SparseVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dim,
        }
    }

    /// Build from (index, value) pairs; zero values are dropped and
    /// duplicate indices summed.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (usize, f64)>) -> Self {
        let mut map: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, v) in pairs {
            assert!(i < dim, "index {i} out of range for dimension {dim}");
            *map.entry(i).or_default() += v;
        }
        let (indices, values) = map.into_iter().filter(|(_, v)| *v != 0.0).map(|(i, v)| (i as u32, v)).unzip();
        Self { indices, values, dim }
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        Self::from_pairs(dense.len(), dense.iter().copied().enumerate())
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfVocabulary {
    ngrams: Vec<String>,
    index: HashMap<String, u32>,
    df: Vec<u64>,
    idf: Vec<f64>,
    n_range: (usize, usize),
    doc_count: u64,
}

pub fn smoothed_idf(doc_count: u64, df: u64) -> f64 {
    ((1.0 + doc_count as f64) / (1.0 + df as f64)).ln() + 1.0
}

/// Every contiguous char n-gram of `text` for n in `n_range`, with repeats.
pub fn char_ngrams(text: &str, n_range: (usize, usize)) -> impl Iterator<Item = String> + '_ {
    let chars: Vec<char> = text.chars().collect();
    (n_range.0..=n_range.1).flat_map(move |n| {
        let windows: Vec<String> = if chars.len() >= n {
            chars.windows(n).map(|w| w.iter().collect()).collect()
        } else {
            Vec::new()
        };
        windows.into_iter()
    })
}

pub fn fit_tfidf<S: AsRef<str>>(texts: &[S], n_range: (usize, usize), min_df: u64) -> Result<TfidfVocabulary, FeatureError> {
    if n_range.0 == 0 || n_range.0 > n_range.1 {
        return Err(FeatureError::BadRange(n_range.0, n_range.1));
    }
    let mut df: BTreeMap<String, u64> = BTreeMap::new();
    for text in texts {
        let mut seen: Vec<String> = char_ngrams(text.as_ref(), n_range).collect();
        seen.sort_unstable();
        seen.dedup();
        for g in seen {
            *df.entry(g).or_default() += 1;
        }
    }
    df.retain(|_, d| *d >= min_df.max(1));
    if df.is_empty() {
        return Err(FeatureError::EmptyVocabulary { min_n: n_range.0 });
    }
    let doc_count = texts.len() as u64;
    let (ngrams, dfs): (Vec<String>, Vec<u64>) = df.into_iter().unzip();
    Ok(TfidfVocabulary::from_parts(ngrams, dfs, n_range, doc_count))
}

impl TfidfVocabulary {
    fn from_parts(ngrams: Vec<String>, df: Vec<u64>, n_range: (usize, usize), doc_count: u64) -> Self {
        let index = ngrams.iter().enumerate().map(|(i, g)| (g.clone(), i as u32)).collect();
        let idf = df.iter().map(|&d| smoothed_idf(doc_count, d)).collect();
        Self {
            ngrams,
            index,
            df,
            idf,
            n_range,
            doc_count,
        }
    }

    pub fn len(&self) -> usize {
        self.ngrams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ngrams.is_empty()
    }

    pub fn n_range(&self) -> (usize, usize) {
        self.n_range
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    pub fn column(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).map(|&i| i as usize)
    }

    pub fn ngram(&self, column: usize) -> &str {
        &self.ngrams[column]
    }

    pub fn df(&self, column: usize) -> u64 {
        self.df[column]
    }

    pub fn idf(&self, column: usize) -> f64 {
        self.idf[column]
    }

    /// L2-normalized tf·idf row; out-of-vocabulary n-grams are ignored.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for g in char_ngrams(text, self.n_range) {
            if let Some(&col) = self.index.get(&g) {
                *tf.entry(col).or_default() += 1;
            }
        }
        let mut indices = Vec::with_capacity(tf.len());
        let mut values = Vec::with_capacity(tf.len());
        for (col, count) in tf {
            indices.push(col);
            values.push(f64::from(count) * self.idf[col as usize]);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        SparseVector {
            indices,
            values,
            dim: self.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(self.n_range.0 as u8);
        w.u8(self.n_range.1 as u8);
        w.u64(self.len() as u64);
        w.u64(self.doc_count);
        for (i, g) in self.ngrams.iter().enumerate() {
            w.str(g);
            w.u64(self.df[i]);
            w.f64(self.idf[i]);
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, FeatureError> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        let n_range = (r.u8()? as usize, r.u8()? as usize);
        if n_range.0 == 0 || n_range.0 > n_range.1 {
            return Err(FeatureError::BadRange(n_range.0, n_range.1));
        }
        let v = r.count(4 + 8 + 8)?;
        let doc_count = r.u64()?;
        let mut ngrams = Vec::with_capacity(v);
        let mut df = Vec::with_capacity(v);
        let mut stored = Vec::with_capacity(v);
        for _ in 0..v {
            ngrams.push(r.str()?);
            df.push(r.u64()?);
            stored.push(r.f64()?);
        }
        r.expect_end()?;
        let vocab = Self::from_parts(ngrams, df, n_range, doc_count);
        for (i, &s) in stored.iter().enumerate() {
            let recomputed = vocab.idf[i];
            if (s - recomputed).abs() > 1e-12 * recomputed.abs().max(1.0) {
                return Err(FeatureError::IdfMismatch {
                    ngram: vocab.ngrams[i].clone(),
                    stored: s,
                    recomputed,
                });
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeatureError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeatureError> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}
