//! Offer-based chunking of knowledge documents and the chunk store that
//! backs retrieval.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::embed::{embed_with_retry, EmbedError, EmbeddingProvider, EmbeddingRole};
use crate::normalize::normalize_text;
use crate::vecindex::{HnswIndex, HnswParams, IndexError, SearchHit};

pub const DEFAULT_MAX_CHUNK_CHARS: usize = 1200;
pub const HEADER_SEPARATOR: &str = " — ";
const INDEX_FILE: &str = "index.hns";
const CHUNKS_FILE: &str = "chunks.jsonl";
const EMBED_ATTEMPTS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("document {0:?} is empty")]
    EmptyDocument(String),
    #[error("max_chunk_chars {0} is too small")]
    BadChunkSize(usize),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("index: {0}")]
    Index(#[from] IndexError),
    #[error("provider dimension {provider} does not match index dimension {index}")]
    DimensionMismatch { provider: usize, index: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocFormat {
    Plain,
    Markdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDocument {
    pub id: String,
    pub title: String,
    pub body: String,
    pub format: DocFormat,
}

impl SourceDocument {
    pub fn new(id: impl Into<String>, title: impl Into<String>, body: impl Into<String>, format: DocFormat) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            body: body.into(),
            format,
        }
    }

    /// Read a file; `.md` and `.markdown` are markdown, anything else plain.
    /// The id is the file stem.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(io_err(path))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("md" | "markdown") => DocFormat::Markdown,
            _ => DocFormat::Plain,
        };
        Ok(Self::new(stem.clone(), stem, body, format))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    /// `doc_id#ordinal`.
    pub id: String,
    pub doc_id: String,
    /// Section header; empty for the preamble.
    pub header: String,
    /// Text as indexed: the source text, behind a header prefix for the
    /// pieces of a split section.
    pub body: String,
    /// Byte length of the injected prefix at the start of `body`.
    pub prefix_len: usize,
    /// Char offsets of the source text in the document body.
    pub span: Range<usize>,
    pub order: usize,
}

impl Chunk {
    /// `body` without the injected header prefix.
    pub fn source_text(&self) -> &str {
        &self.body[self.prefix_len..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkerConfig {
    /// Offer names that open a section when they start a line.
    pub offers: Vec<String>,
    pub markdown_headings: bool,
    pub max_chunk_chars: usize,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            offers: Vec::new(),
            markdown_headings: true,
            max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS,
        }
    }
}

impl ChunkerConfig {
    pub fn with_offers<I, S>(offers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            offers: offers.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }
}

/// Heading text if `line` is an ATX markdown heading (`#` to `######`).
fn markdown_heading(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    let hashes = trimmed.chars().take_while(|&c| c == '#').count();
    if !(1..=6).contains(&hashes) {
        return None;
    }
    let rest = &trimmed[hashes..];
    if !rest.is_empty() && !rest.starts_with([' ', '\t']) {
        return None;
    }
    let text = rest.trim().trim_end_matches('#').trim();
    (!text.is_empty()).then_some(text)
}

/// True if `line` starts with `offer` as a whole word, ignoring case and
/// leading whitespace or list markers.
fn starts_with_offer(line: &str, offer: &str) -> bool {
    let line = line.trim_start().trim_start_matches(['-', '*', '•']).trim_start();
    let lower = line.to_lowercase();
    let offer = offer.trim().to_lowercase();
    if offer.is_empty() || !lower.starts_with(&offer) {
        return false;
    }
    !lower[offer.len()..].chars().next().is_some_and(char::is_alphanumeric)
}

fn header_of(line: &str, config: &ChunkerConfig, format: DocFormat) -> Option<String> {
    if config.markdown_headings || format == DocFormat::Markdown {
        if let Some(h) = markdown_heading(line) {
            return Some(h.to_string());
        }
    }
    config
        .offers
        .iter()
        .any(|o| starts_with_offer(line, o))
        .then(|| line.trim().trim_start_matches(['-', '*', '•']).trim().to_string())
}

/// Byte ranges of sentences: each ends after `.`, `!`, `?`, `؟` or `…`
/// followed by whitespace, or after a newline. Ranges include trailing
/// whitespace and tile `text`.
pub fn sentence_ranges(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        let terminal = matches!(c, '.' | '!' | '?' | '؟' | '…')
            && iter.peek().is_none_or(|&(_, n)| n.is_whitespace());
        if terminal || c == '\n' {
            let mut end = i + c.len_utf8();
            while let Some(&(j, n)) = iter.peek() {
                if !n.is_whitespace() {
                    break;
                }
                end = j + n.len_utf8();
                iter.next();
            }
            out.push(start..end);
            start = end;
        }
    }
    if start < text.len() {
        out.push(start..text.len());
    }
    out
}

/// Split a run longer than `budget` chars at whitespace, or hard at
/// `budget` chars when a word is longer than that.
fn split_long(text: &str, base: usize, budget: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while text[start..].chars().count() > budget {
        let limit = text[start..].char_indices().nth(budget).map(|(i, _)| start + i).unwrap_or(text.len());
        let cut = text[start..limit]
            .char_indices()
            .filter(|(_, c)| c.is_whitespace())
            .map(|(i, c)| start + i + c.len_utf8())
            .rfind(|&i| i > start)
            .unwrap_or(limit);
        out.push(base + start..base + cut);
        start = cut;
    }
    if start < text.len() {
        out.push(base + start..base + text.len());
    }
    out
}

/// Greedy packing of sentences into pieces of at most `budget` chars.
fn pack_sentences(text: &str, budget: usize) -> Vec<Range<usize>> {
    let mut pieces: Vec<Range<usize>> = Vec::new();
    let mut current: Option<Range<usize>> = None;
    for s in sentence_ranges(text) {
        let units = if text[s.clone()].chars().count() > budget {
            split_long(&text[s.clone()], s.start, budget)
        } else {
            vec![s]
        };
        for u in units {
            current = match current.take() {
                Some(c) if text[c.start..u.end].chars().count() <= budget => Some(c.start..u.end),
                Some(c) => {
                    pieces.push(c);
                    Some(u)
                }
                None => Some(u),
            };
        }
    }
    pieces.extend(current);
    pieces
}

fn byte_to_char(text: &str) -> impl Fn(usize) -> usize + '_ {
    move |b| text[..b].chars().count()
}

pub fn chunk_by_offer(doc: &SourceDocument, config: &ChunkerConfig) -> Result<Vec<Chunk>, IngestError> {
    if doc.body.trim().is_empty() {
        return Err(IngestError::EmptyDocument(doc.id.clone()));
    }
    // Sections as (header, byte range); the preamble has an empty header.
    let mut sections: Vec<(String, Range<usize>)> = Vec::new();
    let mut open: (String, usize) = (String::new(), 0);
    let mut pos = 0;
    for line in doc.body.split_inclusive('\n') {
        if let Some(h) = header_of(line, config, doc.format) {
            if pos > open.1 {
                sections.push((open.0, open.1..pos));
            }
            open = (h, pos);
        }
        pos += line.len();
    }
    sections.push((open.0, open.1..doc.body.len()));
    sections.retain(|(h, r)| !h.is_empty() || !doc.body[r.clone()].trim().is_empty());

    let to_char = byte_to_char(&doc.body);
    let mut chunks = Vec::new();
    for (header, range) in sections {
        let text = &doc.body[range.clone()];
        let prefix = format!("{header}{HEADER_SEPARATOR}");
        let pieces = if text.chars().count() <= config.max_chunk_chars {
            vec![(String::new(), range.clone())]
        } else {
            let budget = config.max_chunk_chars.saturating_sub(prefix.chars().count());
            if budget < 16 {
                return Err(IngestError::BadChunkSize(config.max_chunk_chars));
            }
            let prefix = if header.is_empty() { String::new() } else { prefix };
            pack_sentences(text, budget)
                .into_iter()
                .map(|r| (prefix.clone(), range.start + r.start..range.start + r.end))
                .collect()
        };
        for (prefix, r) in pieces {
            let order = chunks.len();
            chunks.push(Chunk {
                id: format!("{}#{order}", doc.id),
                doc_id: doc.id.clone(),
                header: header.clone(),
                body: format!("{prefix}{}", &doc.body[r.clone()]),
                prefix_len: prefix.len(),
                span: to_char(r.start)..to_char(r.end),
                order,
            });
        }
    }
    Ok(chunks)
}

/// The text embedded for a chunk.
pub fn passage_text(chunk: &Chunk) -> String {
    normalize_text(&chunk.body).text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredChunk {
    key: u64,
    #[serde(flatten)]
    chunk: Chunk,
}

/// An immutable snapshot: chunks plus the index over their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    index: HnswIndex,
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn empty(dim: usize, params: HnswParams) -> Self {
        Self {
            index: HnswIndex::new(dim, params),
            chunks: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn index(&self) -> &HnswIndex {
        &self.index
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    /// Chunk stored under an index key.
    pub fn chunk_by_key(&self, key: u64) -> Option<&Chunk> {
        self.chunks.get(key as usize)
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.chunks.iter().map(|c| c.doc_id.as_str()).collect();
        ids.dedup();
        ids
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.index.search_default(query, k)
    }

    fn from_parts(dim: usize, params: HnswParams, entries: Vec<(Chunk, Vec<f32>)>) -> Result<Self, IndexError> {
        let mut kb = Self::empty(dim, params);
        for (key, (chunk, vector)) in entries.into_iter().enumerate() {
            kb.index.insert(key as u64, &vector, chunk.id.clone())?;
            kb.by_id.insert(chunk.id.clone(), key);
            kb.chunks.push(chunk);
        }
        Ok(kb)
    }

    /// A new snapshot with `doc` chunked, embedded and indexed, replacing
    /// any chunks previously ingested for the same document id. `self` is
    /// left untouched whatever happens.
    pub fn with_document<P: EmbeddingProvider + ?Sized>(
        &self,
        doc: &SourceDocument,
        config: &ChunkerConfig,
        provider: &P,
    ) -> Result<(Self, usize), IngestError> {
        if provider.dim() != self.dim() {
            return Err(IngestError::DimensionMismatch {
                provider: provider.dim(),
                index: self.dim(),
            });
        }
        let chunks = chunk_by_offer(doc, config)?;
        let texts: Vec<String> = chunks.iter().map(passage_text).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let vectors = embed_with_retry(provider, &refs, EmbeddingRole::Passage, EMBED_ATTEMPTS)?;
        if vectors.len() != chunks.len() {
            return Err(EmbedError::CountMismatch {
                expected: chunks.len(),
                got: vectors.len(),
            }
            .into());
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != self.dim()) {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            }
            .into());
        }
        let count = chunks.len();
        let mut entries: Vec<(Chunk, Vec<f32>)> = self
            .chunks
            .iter()
            .enumerate()
            .filter(|(_, c)| c.doc_id != doc.id)
            .map(|(key, c)| (c.clone(), self.index.vector(key as u64).expect("stored vector").to_vec()))
            .collect();
        entries.extend(chunks.into_iter().zip(vectors));
        Ok((Self::from_parts(self.dim(), self.index.params(), entries)?, count))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IngestError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let index_path = dir.join(INDEX_FILE);
        self.index.save(&index_path)?;
        let chunks_path = dir.join(CHUNKS_FILE);
        let file = std::fs::File::create(&chunks_path).map_err(io_err(&chunks_path))?;
        let mut out = BufWriter::new(file);
        for (key, chunk) in self.chunks.iter().enumerate() {
            let line = serde_json::to_string(&StoredChunk {
                key: key as u64,
                chunk: chunk.clone(),
            })
            .expect("chunk serializes");
            writeln!(out, "{line}").map_err(io_err(&chunks_path))?;
        }
        out.flush().map_err(io_err(&chunks_path))
    }

    /// Whether `dir` holds a saved knowledge base.
    pub fn is_saved_in(dir: impl AsRef<Path>) -> bool {
        dir.as_ref().join(INDEX_FILE).is_file()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref();
        let index = HnswIndex::load(dir.join(INDEX_FILE))?;
        let chunks_path = dir.join(CHUNKS_FILE);
        let file = std::fs::File::open(&chunks_path).map_err(io_err(&chunks_path))?;
        let corrupt = |line: usize, message: String| IngestError::Corrupt {
            path: chunks_path.display().to_string(),
            line,
            message,
        };
        let mut chunks = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&chunks_path))?;
            if line.trim().is_empty() {
                continue;
            }
            let stored: StoredChunk = serde_json::from_str(&line).map_err(|e| corrupt(n + 1, e.to_string()))?;
            if stored.key as usize != chunks.len() {
                return Err(corrupt(n + 1, format!("expected key {}, found {}", chunks.len(), stored.key)));
            }
            if index.metadata(stored.key) != Some(stored.chunk.id.as_str()) {
                return Err(corrupt(n + 1, format!("chunk {} is not in the index", stored.chunk.id)));
            }
            chunks.push(stored.chunk);
        }
        if chunks.len() != index.len() {
            return Err(corrupt(0, format!("{} chunks for {} indexed vectors", chunks.len(), index.len())));
        }
        let by_id = chunks.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        Ok(Self { index, chunks, by_id })
    }
}

/// Shared, swappable knowledge snapshot. Readers clone an `Arc` and never
/// see a partly built index; ingestion jobs run one at a time.
#[derive(Debug)]
pub struct KnowledgeStore {
    current: RwLock<Arc<KnowledgeBase>>,
    ingest_lock: Mutex<()>,
}

impl KnowledgeStore {
    pub fn new(kb: KnowledgeBase) -> Self {
        Self {
            current: RwLock::new(Arc::new(kb)),
            ingest_lock: Mutex::new(()),
        }
    }

    pub fn snapshot(&self) -> Arc<KnowledgeBase> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn replace(&self, kb: KnowledgeBase) {
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(kb);
    }

    /// Build a new snapshot with `doc` and publish it; on error the old
    /// snapshot keeps serving. Returns the number of chunks indexed.
    pub fn ingest<P: EmbeddingProvider + ?Sized>(
        &self,
        doc: &SourceDocument,
        config: &ChunkerConfig,
        provider: &P,
    ) -> Result<usize, IngestError> {
        let _guard = self.ingest_lock.lock().unwrap_or_else(|e| e.into_inner());
        let (next, count) = self.snapshot().with_document(doc, config, provider)?;
        self.replace(next);
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(body: &str) -> SourceDocument {
        SourceDocument::new("d", "d", body, DocFormat::Markdown)
    }

    #[test]
    fn markdown_heading_detection() {
        assert_eq!(markdown_heading("## PixX 1000"), Some("PixX 1000"));
        assert_eq!(markdown_heading("#hashtag"), None);
        assert_eq!(markdown_heading("####### too deep"), None);
        assert_eq!(markdown_heading("# Title #"), Some("Title"));
    }

    #[test]
    fn offer_names_match_whole_words() {
        assert!(starts_with_offer("PixX 1000: 1000 DA", "pixx"));
        assert!(starts_with_offer("- Win 500", "win"));
        assert!(!starts_with_offer("Winner offer", "win"));
        assert!(!starts_with_offer("the PixX offer", "pixx"));
    }

    #[test]
    fn three_headings_three_chunks() {
        let chunks = chunk_by_offer(&doc("# A\nalpha.\n# B\nbeta.\n# C\ngamma.\n"), &ChunkerConfig::default()).unwrap();
        let headers: Vec<&str> = chunks.iter().map(|c| c.header.as_str()).collect();
        assert_eq!(headers, ["A", "B", "C"]);
        assert_eq!(chunks[1].body, "# B\nbeta.\n");
        assert_eq!(chunks[1].id, "d#1");
    }

    #[test]
    fn no_headings_one_preamble() {
        let chunks = chunk_by_offer(&doc("just text.\nmore text."), &ChunkerConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].header, "");
        assert_eq!(chunks[0].span, 0..21);
    }

    #[test]
    fn plain_offer_lines_open_sections() {
        let d = SourceDocument::new("p", "p", "intro\nSama 200 offer\nprice 200\nWin 500\nprice 500\n", DocFormat::Plain);
        let cfg = ChunkerConfig {
            markdown_headings: false,
            ..ChunkerConfig::with_offers(["sama", "win"])
        };
        let chunks = chunk_by_offer(&d, &cfg).unwrap();
        let headers: Vec<&str> = chunks.iter().map(|c| c.header.as_str()).collect();
        assert_eq!(headers, ["", "Sama 200 offer", "Win 500"]);
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(matches!(chunk_by_offer(&doc("  \n"), &ChunkerConfig::default()), Err(IngestError::EmptyDocument(_))));
    }

    #[test]
    fn sentence_ranges_tile() {
        let t = "Un. Deux! Trois؟ quatre\ncinq";
        let r = sentence_ranges(t);
        assert_eq!(r.first().unwrap().start, 0);
        assert_eq!(r.last().unwrap().end, t.len());
        assert!(r.windows(2).all(|w| w[0].end == w[1].start));
        assert_eq!(&t[r[0].clone()], "Un. ");
    }

    #[test]
    fn overlong_word_is_hard_split() {
        let pieces = pack_sentences(&"x".repeat(50), 20);
        assert_eq!(pieces, vec![0..20, 20..40, 40..50]);
    }
}
