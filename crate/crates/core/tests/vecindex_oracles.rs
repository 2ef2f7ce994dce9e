use std::collections::{HashSet, VecDeque};

use darja_core::vecindex::{HnswIndex, HnswParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / norm) as f32).collect()
        })
        .collect()
}

fn build(n: usize, dim: usize, seed: u64) -> (HnswIndex, Vec<Vec<f32>>) {
    let vectors = unit_vectors(n, dim, seed);
    let mut ix = HnswIndex::new(dim, HnswParams::default());
    for (i, v) in vectors.iter().enumerate() {
        ix.insert(i as u64, v, format!("chunk-{i}")).unwrap();
    }
    (ix, vectors)
}

fn layer0_reachable(ix: &HnswIndex) -> usize {
    let Some((entry, _)) = ix.entry_point() else {
        return 0;
    };
    let mut seen = HashSet::from([entry]);
    let mut queue = VecDeque::from([entry]);
    while let Some(id) = queue.pop_front() {
        for nb in ix.neighbors(id, 0) {
            if seen.insert(nb) {
                queue.push_back(nb);
            }
        }
    }
    seen.len()
}

fn assert_symmetric_and_capped(ix: &HnswIndex) {
    for id in ix.ids() {
        for layer in 0..=ix.level(id).unwrap() {
            let nbs = ix.neighbors(id, layer);
            assert!(nbs.len() <= ix.max_degree(layer), "node {id} layer {layer} degree {}", nbs.len());
            for nb in nbs {
                assert!(ix.neighbors(nb, layer).contains(&id), "edge {id}->{nb} at layer {layer} is one-way");
            }
        }
    }
}

#[test]
fn degree_caps_after_100_inserts() {
    let (ix, _) = build(100, 16, 1);
    assert_symmetric_and_capped(&ix);
}

fn mean_recall_at_10(ix: &HnswIndex, queries: &[Vec<f32>], ef: usize) -> f64 {
    let mut total = 0.0;
    for q in queries {
        let approx: HashSet<u64> = ix.search(q, 10, ef).unwrap().iter().map(|h| h.id).collect();
        let exact = ix.exact_search(q, 10).unwrap();
        total += exact.iter().filter(|h| approx.contains(&h.id)).count() as f64 / 10.0;
    }
    total / queries.len() as f64
}

#[test]
fn graph_is_connected_at_2000() {
    let (ix, _) = build(2000, 384, 2);
    assert_eq!(layer0_reachable(&ix), 2000);
    assert_symmetric_and_capped(&ix);

    // Fresh random queries in 384 dimensions are a hard case for a graph
    // capped at 2M layer-0 links: the default beam lands near 0.84 and a
    // beam of 128 clears 0.95.
    let queries = unit_vectors(100, 384, 3);
    let narrow = mean_recall_at_10(&ix, &queries, 64);
    assert!(narrow >= 0.80, "recall@10 at ef=64: {narrow}");
    let wide = mean_recall_at_10(&ix, &queries, 128);
    assert!(wide >= 0.95, "recall@10 at ef=128: {wide}");
}

#[test]
fn self_retrieval_and_score_bounds() {
    let (ix, vectors) = build(300, 32, 4);
    for (i, v) in vectors.iter().enumerate().step_by(7) {
        let hits = ix.search(v, 1, 64).unwrap();
        assert_eq!(hits[0].id, i as u64);
        assert!((hits[0].score - 1.0).abs() < 1e-5);
    }
    for q in unit_vectors(20, 32, 5) {
        for h in ix.search(&q, 50, 64).unwrap() {
            assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&h.score));
        }
    }
}

#[test]
fn small_index_matches_exact_search() {
    let (ix, _) = build(60, 24, 6);
    for q in unit_vectors(30, 24, 7) {
        assert_eq!(ix.search(&q, 10, 64).unwrap(), ix.exact_search(&q, 10).unwrap());
    }
    let all = ix.search(&unit_vectors(1, 24, 8)[0], 1000, 64).unwrap();
    assert_eq!(all.len(), 60);
    assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn incremental_insert_is_found_first() {
    let (mut ix, _) = build(500, 32, 9);
    let fresh = unit_vectors(1, 32, 10).remove(0);
    ix.insert(10_000, &fresh, "new").unwrap();
    let hits = ix.search(&fresh, 1, 64).unwrap();
    assert_eq!(hits[0].id, 10_000);
    assert!((hits[0].score - 1.0).abs() < 1e-5);
}

#[test]
fn persistence_is_bit_exact() {
    let (ix, _) = build(800, 64, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.hns");
    ix.save(&path).unwrap();
    let back = HnswIndex::load(&path).unwrap();
    assert_eq!(back.to_bytes(), ix.to_bytes());
    for q in unit_vectors(100, 64, 12) {
        let a = ix.search(&q, 10, 64).unwrap();
        let b = back.search(&q, 10, 64).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.score.to_bits(), y.score.to_bits());
        }
    }
    assert_eq!(back.metadata(5), Some("chunk-5"));
}

#[test]
fn truncated_file_names_an_offset() {
    let (ix, _) = build(20, 8, 13);
    let bytes = ix.to_bytes();
    let err = HnswIndex::from_bytes(&bytes[..bytes.len() - 5]).unwrap_err();
    assert!(err.to_string().contains("offset"), "{err}");
}

#[test]
fn construction_is_deterministic() {
    let (a, _) = build(300, 32, 14);
    let (b, _) = build(300, 32, 14);
    assert_eq!(a.to_bytes(), b.to_bytes());
}
