//! HNSW approximate nearest-neighbour index over unit vectors.
//!
//! Vectors are L2-normalized on insert and stored as f32; the score is their
//! dot product accumulated in f64. Node levels come from a hash of the
//! index seed and the node id, so a fixed seed and insert order give a
//! bit-identical graph.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::Serialize;

use crate::binio::{FormatError, Reader, Writer};
use crate::embed::seeded_hash;

const MAGIC: &[u8; 4] = b"HNS1";
const VERSION: u8 = 1;
const MAX_LEVEL: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("id {0} is already in the index")]
    DuplicateId(u64),
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector for id {0} has zero or non-finite norm")]
    BadVector(u64),
    #[error("index file: {0}")]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnswParams {
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 64,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    id: u64,
    metadata: String,
    vector: Vec<f32>,
    /// Neighbour slots per layer, `0..=level`.
    links: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    dim: usize,
    params: HnswParams,
    ml: f64,
    nodes: Vec<Node>,
    slots: HashMap<u64, u32>,
    entry: Option<u32>,
}

/// Candidate ordered by score, then by smaller slot as the better one.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cand {
    score: f64,
    slot: u32,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn sort_hits(hits: &mut [SearchHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        let m = params.m.max(2);
        Self {
            dim,
            params: HnswParams { m, ..params },
            ml: 1.0 / (m as f64).ln(),
            nodes: Vec::new(),
            slots: HashMap::new(),
            entry: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.slots.contains_key(&id)
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn metadata(&self, id: u64) -> Option<&str> {
        self.node(id).map(|n| n.metadata.as_str())
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.node(id).map(|n| n.vector.as_slice())
    }

    pub fn level(&self, id: u64) -> Option<usize> {
        self.node(id).map(|n| n.links.len() - 1)
    }

    /// Entry point id and top layer.
    pub fn entry_point(&self) -> Option<(u64, usize)> {
        self.entry.map(|s| {
            let n = &self.nodes[s as usize];
            (n.id, n.links.len() - 1)
        })
    }

    /// Neighbour ids of `id` at `layer`; empty above the node's level.
    pub fn neighbors(&self, id: u64, layer: usize) -> Vec<u64> {
        self.node(id)
            .and_then(|n| n.links.get(layer))
            .map(|l| l.iter().map(|&s| self.nodes[s as usize].id).collect())
            .unwrap_or_default()
    }

    pub fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn node(&self, id: u64) -> Option<&Node> {
        self.slots.get(&id).map(|&s| &self.nodes[s as usize])
    }

    fn level_for(&self, id: u64) -> usize {
        let h = seeded_hash(self.params.seed, &id.to_string());
        // u in (0, 1): 53 high bits shifted off zero.
        let u = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
        ((-u.ln() * self.ml).floor() as usize).min(MAX_LEVEL)
    }

    fn score(&self, q: &[f32], slot: u32) -> f64 {
        dot(q, &self.nodes[slot as usize].vector)
    }

    fn check_dim(&self, got: usize) -> Result<(), IndexError> {
        if got != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got });
        }
        Ok(())
    }

    /// Beam search at one layer; returns up to `ef` candidates, best first.
    fn search_layer(&self, q: &[f32], entries: &[Cand], ef: usize, layer: usize) -> Vec<Cand> {
        let mut visited: HashSet<u32> = entries.iter().map(|c| c.slot).collect();
        let mut frontier: BinaryHeap<Cand> = entries.iter().copied().collect();
        // Min-heap of the current best `ef` via Reverse ordering.
        let mut best: BinaryHeap<std::cmp::Reverse<Cand>> = entries.iter().copied().map(std::cmp::Reverse).collect();
        while best.len() > ef {
            best.pop();
        }
        while let Some(c) = frontier.pop() {
            let worst = best.peek().map(|r| r.0).expect("non-empty");
            if c < worst && best.len() >= ef {
                break;
            }
            for &nb in &self.nodes[c.slot as usize].links[layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    score: self.score(q, nb),
                    slot: nb,
                };
                let worst = best.peek().map(|r| r.0).expect("non-empty");
                if best.len() < ef || cand > worst {
                    frontier.push(cand);
                    best.push(std::cmp::Reverse(cand));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Cand> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn greedy_descent(&self, q: &[f32], from_layer: usize, to_layer: usize) -> Cand {
        let entry = self.entry.expect("non-empty index");
        let mut cur = Cand {
            score: self.score(q, entry),
            slot: entry,
        };
        for layer in (to_layer + 1..=from_layer).rev() {
            cur = self.search_layer(q, &[cur], 1, layer)[0];
        }
        cur
    }

    pub fn insert(&mut self, id: u64, vector: &[f32], metadata: impl Into<String>) -> Result<(), IndexError> {
        self.check_dim(vector.len())?;
        if self.slots.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let norm = vector.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(IndexError::BadVector(id));
        }
        let q: Vec<f32> = vector.iter().map(|x| (f64::from(*x) / norm) as f32).collect();
        let level = self.level_for(id);
        let slot = self.nodes.len() as u32;
        self.nodes.push(Node {
            id,
            metadata: metadata.into(),
            vector: q.clone(),
            links: vec![Vec::new(); level + 1],
        });
        self.slots.insert(id, slot);

        let Some(entry) = self.entry else {
            self.entry = Some(slot);
            return Ok(());
        };
        let top = self.nodes[entry as usize].links.len() - 1;
        let mut eps = vec![self.greedy_descent(&q, top, level.min(top))];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&q, &eps, self.params.ef_construction, layer);
            let chosen: Vec<u32> = found
                .iter()
                .filter(|c| c.slot != slot)
                .take(self.params.m)
                .map(|c| c.slot)
                .collect();
            for &nb in &chosen {
                self.nodes[slot as usize].links[layer].push(nb);
                self.nodes[nb as usize].links[layer].push(slot);
            }
            for &nb in &chosen {
                self.prune(nb, layer);
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(slot);
        }
        Ok(())
    }

    /// Drop the farthest edges of `slot` until it fits the layer cap,
    /// removing both directions. Edges to nodes that would be left without
    /// any neighbour are dropped only when nothing else is left to drop.
    fn prune(&mut self, slot: u32, layer: usize) {
        let cap = self.max_degree(layer);
        while self.nodes[slot as usize].links[layer].len() > cap {
            let base = self.nodes[slot as usize].vector.clone();
            let mut ranked: Vec<Cand> = self.nodes[slot as usize].links[layer]
                .iter()
                .map(|&s| Cand {
                    score: self.score(&base, s),
                    slot: s,
                })
                .collect();
            ranked.sort();
            let victim = ranked
                .iter()
                .find(|c| self.nodes[c.slot as usize].links[layer].len() > 1)
                .unwrap_or(&ranked[0])
                .slot;
            self.nodes[slot as usize].links[layer].retain(|&s| s != victim);
            self.nodes[victim as usize].links[layer].retain(|&s| s != slot);
        }
    }

    /// Approximate top-k by cosine, beam width `max(ef, k)` at layer 0.
    pub fn search(&self, query: &[f32], k: usize, ef: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.check_dim(query.len())?;
        let Some(entry) = self.entry else {
            return Ok(Vec::new());
        };
        if k == 0 {
            return Ok(Vec::new());
        }
        let q = normalized(query);
        let top = self.nodes[entry as usize].links.len() - 1;
        let ep = self.greedy_descent(&q, top, 0);
        let found = self.search_layer(&q, &[ep], ef.max(k), 0);
        let mut hits: Vec<SearchHit> = found
            .into_iter()
            .map(|c| SearchHit {
                id: self.nodes[c.slot as usize].id,
                score: c.score,
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn search_default(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.search(query, k, self.params.ef_search)
    }

    /// Brute-force top-k under the same scoring and ordering as [`Self::search`].
    pub fn exact_search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        self.check_dim(query.len())?;
        let q = normalized(query);
        let mut hits: Vec<SearchHit> = self
            .nodes
            .iter()
            .map(|n| SearchHit {
                id: n.id,
                score: dot(&q, &n.vector),
            })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        Ok(hits)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.u64(self.dim as u64);
        w.u64(self.nodes.len() as u64);
        w.u64(self.params.m as u64);
        w.u64(self.params.ef_construction as u64);
        w.u64(self.params.ef_search as u64);
        w.u64(self.params.seed);
        w.f64(self.ml);
        match self.entry {
            Some(s) => {
                let n = &self.nodes[s as usize];
                w.u8(1);
                w.u64(n.id);
                w.u64((n.links.len() - 1) as u64);
            }
            None => {
                w.u8(0);
                w.u64(0);
                w.u64(0);
            }
        }
        for n in &self.nodes {
            w.u64(n.id);
            w.u64((n.links.len() - 1) as u64);
            w.str(&n.metadata);
            for x in &n.vector {
                w.f32(*x);
            }
            for layer in &n.links {
                w.u32(layer.len() as u32);
                for &s in layer {
                    w.u64(self.nodes[s as usize].id);
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader::new(buf);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let dim = r.u64()? as usize;
        let count_offset = r.offset();
        let count = r.count(8 + 8 + 4 + 4)?;
        let params = HnswParams {
            m: r.u64()? as usize,
            ef_construction: r.u64()? as usize,
            ef_search: r.u64()? as usize,
            seed: r.u64()?,
        };
        let ml = r.f64()?;
        let has_entry = r.u8()? == 1;
        let entry_offset = r.offset();
        let entry_id = r.u64()?;
        let _entry_layer = r.u64()?;
        let corrupt = |offset: usize, message: String| IndexError::Format(FormatError::Corrupt { offset, message });

        let mut nodes = Vec::with_capacity(count);
        let mut raw_links: Vec<Vec<Vec<u64>>> = Vec::with_capacity(count);
        let mut slots = HashMap::with_capacity(count);
        for _ in 0..count {
            let at = r.offset();
            let id = r.u64()?;
            let level = r.u64()? as usize;
            if level > MAX_LEVEL {
                return Err(corrupt(at, format!("node level {level} exceeds {MAX_LEVEL}")));
            }
            let metadata = r.str()?;
            let mut vector = Vec::with_capacity(dim.min(buf.len()));
            for _ in 0..dim {
                vector.push(r.f32()?);
            }
            let mut layers = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let len = r.u32()? as usize;
                let mut ids = Vec::with_capacity(len.min(buf.len() / 8));
                for _ in 0..len {
                    ids.push(r.u64()?);
                }
                layers.push(ids);
            }
            if slots.insert(id, nodes.len() as u32).is_some() {
                return Err(corrupt(at, format!("duplicate id {id}")));
            }
            nodes.push(Node {
                id,
                metadata,
                vector,
                links: Vec::new(),
            });
            raw_links.push(layers);
        }
        r.expect_end()?;
        for (node, layers) in nodes.iter_mut().zip(raw_links) {
            node.links = layers
                .into_iter()
                .map(|ids| {
                    ids.into_iter()
                        .map(|id| {
                            slots
                                .get(&id)
                                .copied()
                                .ok_or_else(|| corrupt(count_offset, format!("neighbour {id} is not a stored node")))
                        })
                        .collect::<Result<Vec<u32>, _>>()
                })
                .collect::<Result<_, _>>()?;
        }
        let entry = if has_entry {
            Some(
                *slots
                    .get(&entry_id)
                    .ok_or_else(|| corrupt(entry_offset, format!("entry id {entry_id} is not a stored node")))?,
            )
        } else {
            None
        };
        Ok(Self {
            dim,
            params,
            ml,
            nodes,
            slots,
            entry,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&buf)
    }
}

fn normalized(v: &[f32]) -> Vec<f32> {
    let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| (f64::from(*x) / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_insert_is_entry_point() {
        let mut ix = HnswIndex::new(2, HnswParams::default());
        ix.insert(9, &[1.0, 0.0], "c9").unwrap();
        assert_eq!(ix.entry_point().map(|e| e.0), Some(9));
        assert_eq!(ix.metadata(9), Some("c9"));
    }

    #[test]
    fn hand_placed_exact_order() {
        let mut ix = HnswIndex::new(2, HnswParams::default());
        ix.insert(1, &[1.0, 0.0], "").unwrap();
        ix.insert(2, &[0.0, 1.0], "").unwrap();
        ix.insert(3, &[1.0, 1.0], "").unwrap();
        // query (2,1)/√5: cos with (1,0) = 2/√5, with (0,1) = 1/√5, with (1,1)/√2 = 3/√10
        let hits = ix.exact_search(&[2.0, 1.0], 3).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.id).collect();
        assert_eq!(ids, vec![3, 1, 2]);
        assert!((hits[0].score - 3.0 / 10f64.sqrt()).abs() < 1e-6);
        assert!((hits[1].score - 2.0 / 5f64.sqrt()).abs() < 1e-6);
        assert!((hits[2].score - 1.0 / 5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        let mut ix = HnswIndex::new(2, HnswParams::default());
        assert!(ix.search(&[1.0, 0.0], 3, 64).unwrap().is_empty());
        assert!(ix.exact_search(&[1.0, 0.0], 3).unwrap().is_empty());
        ix.insert(1, &[1.0, 0.0], "").unwrap();
        assert!(matches!(ix.insert(1, &[0.0, 1.0], ""), Err(IndexError::DuplicateId(1))));
        assert!(matches!(ix.insert(2, &[0.0, 1.0, 0.0], ""), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(ix.insert(3, &[0.0, 0.0], ""), Err(IndexError::BadVector(3))));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let mut ix = HnswIndex::new(2, HnswParams::default());
        ix.insert(5, &[1.0, 0.0], "").unwrap();
        ix.insert(2, &[1.0, 0.0], "").unwrap();
        let ids: Vec<u64> = ix.search(&[1.0, 0.0], 2, 64).unwrap().iter().map(|h| h.id).collect();
        assert_eq!(ids, vec![2, 5]);
    }

    #[test]
    fn empty_and_version_errors() {
        assert!(matches!(
            HnswIndex::from_bytes(b""),
            Err(IndexError::Format(FormatError::BadMagic { .. }))
        ));
        let mut bytes = HnswIndex::new(4, HnswParams::default()).to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            HnswIndex::from_bytes(&bytes),
            Err(IndexError::Format(FormatError::UnsupportedVersion { found: 9, offset: 4, .. }))
        ));
    }
}
