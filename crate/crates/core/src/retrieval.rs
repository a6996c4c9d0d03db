//! Embedding store with cosine-similarity top-1 instance retrieval of the
//! reference document, plus a native thumbnail embedder so retrieval runs
//! without a neural encoder.
//!
//! The store is a flat exact-scan index; corpus sizes here need no
//! approximate-nearest-neighbor structure. Vectors are persisted at 32-bit
//! float precision (see `formats`); similarity is computed in 64-bit.

use crate::error::{Error, Result};
use crate::raster::Raster;

/// One stored document embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub doc_id: String,
    pub model_id: String,
    pub vector: Vec<f64>,
}

/// Flat collection of equal-length embeddings with unique doc ids.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    dimension: usize,
    records: Vec<EmbeddingRecord>,
}

impl EmbeddingStore {
    pub fn new(dimension: usize) -> EmbeddingStore {
        EmbeddingStore {
            dimension,
            records: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, record: EmbeddingRecord) -> Result<()> {
        if record.vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: record.vector.len(),
            });
        }
        if norm(&record.vector) <= 0.0 {
            return Err(Error::ZeroNorm);
        }
        if self.records.iter().any(|r| r.doc_id == record.doc_id) {
            return Err(Error::DuplicateDocId(record.doc_id));
        }
        self.records.push(record);
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity `dot(u, v) / (|u| |v|)` in `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu <= 0.0 || nv <= 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// Side length of the thumbnail grid; vectors have `16 * 16` entries.
pub const THUMBNAIL_SIDE: usize = 16;
pub const THUMBNAIL_DIM: usize = THUMBNAIL_SIDE * THUMBNAIL_SIDE;

/// Area-averaged 16x16 grayscale thumbnail, mean-subtracted and
/// L2-normalized. Deterministic; a constant image is an error since its
/// centered vector would have zero norm.
pub fn embed_thumbnail(img: &Raster) -> Result<Vec<f64>> {
    let gray = img.to_gray();
    let (w, h) = (gray.width() as f64, gray.height() as f64);
    let side = THUMBNAIL_SIDE;
    let mut cells = vec![0.0f64; THUMBNAIL_DIM];

    // Exact area averaging: each output cell integrates the pixel values
    // over its continuous sub-rectangle of the image.
    let mut row_cuts = Vec::with_capacity(side + 1);
    let mut col_cuts = Vec::with_capacity(side + 1);
    for i in 0..=side {
        row_cuts.push(h * i as f64 / side as f64);
        col_cuts.push(w * i as f64 / side as f64);
    }
    for cy in 0..side {
        for cx in 0..side {
            let (y0, y1) = (row_cuts[cy], row_cuts[cy + 1]);
            let (x0, x1) = (col_cuts[cx], col_cuts[cx + 1]);
            let mut acc = 0.0;
            let mut py = y0.floor() as usize;
            while (py as f64) < y1 {
                let wy = (y1.min(py as f64 + 1.0) - y0.max(py as f64)).max(0.0);
                let mut px = x0.floor() as usize;
                while (px as f64) < x1 {
                    let wx = (x1.min(px as f64 + 1.0) - x0.max(px as f64)).max(0.0);
                    acc += wx * wy * gray.get(px, py, 0) as f64;
                    px += 1;
                }
                py += 1;
            }
            cells[cy * side + cx] = acc / ((x1 - x0) * (y1 - y0));
        }
    }

    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    for c in cells.iter_mut() {
        *c -= mean;
    }
    let n = norm(&cells);
    if n < 1e-9 {
        return Err(Error::ConstantImage);
    }
    for c in cells.iter_mut() {
        *c /= n;
    }
    Ok(cells)
}

/// The record maximizing cosine similarity to the query; ties broken by
/// the lexicographically smallest doc_id.
pub fn top1<'a>(store: &'a EmbeddingStore, query: &[f64]) -> Result<&'a EmbeddingRecord> {
    top1_excluding(store, query, None)
}

/// Like [`top1`] but skipping one doc_id (used to prevent a document from
/// retrieving itself in evaluations).
pub fn top1_excluding<'a>(
    store: &'a EmbeddingStore,
    query: &[f64],
    exclude_doc: Option<&str>,
) -> Result<&'a EmbeddingRecord> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if query.len() != store.dimension() {
        return Err(Error::DimensionMismatch {
            expected: store.dimension(),
            got: query.len(),
        });
    }
    let mut best: Option<(f64, &EmbeddingRecord)> = None;
    for record in store.records() {
        if exclude_doc == Some(record.doc_id.as_str()) {
            continue;
        }
        let sim = cosine(query, &record.vector)?;
        let better = match best {
            None => true,
            Some((bs, br)) => sim > bs || (sim == bs && record.doc_id < br.doc_id),
        };
        if better {
            best = Some((sim, record));
        }
    }
    best.map(|(_, r)| r).ok_or(Error::EmptyStore)
}

/// Fraction of queries whose top-1 record carries the true model_id.
/// Leave-one-out is the caller's responsibility: query documents must not
/// be in the store.
pub fn retrieval_accuracy(store: &EmbeddingStore, queries: &[(Vec<f64>, String)]) -> Result<f64> {
    if queries.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for (vector, true_model) in queries {
        if top1(store, vector)?.model_id == *true_model {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn record(doc: &str, model: &str, vector: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            doc_id: doc.to_string(),
            model_id: model.to_string(),
            vector,
        }
    }

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -1.2, 4.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // dot 8, norms 3 and 3
        let a = [1.0, 2.0, 2.0];
        let b = [2.0, 1.0, 2.0];
        assert!((cosine(&a, &b).unwrap() - 8.0 / 9.0).abs() < 1e-12);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn thumbnail_is_normalized_and_deterministic() {
        let mut rng = rng::from_seed(40);
        let data: Vec<u8> = (0..100 * 60).map(|_| rng::byte(&mut rng)).collect();
        let img = Raster::from_data(100, 60, 1, data).unwrap();
        let a = embed_thumbnail(&img).unwrap();
        let b = embed_thumbnail(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), THUMBNAIL_DIM);
        assert!((norm(&a) - 1.0).abs() < 1e-9);
        assert!(embed_thumbnail(&Raster::new_gray(50, 50, 77)).is_err());
    }

    #[test]
    fn top1_picks_argmax_with_tie_break() {
        let mut store = EmbeddingStore::new(2);
        store.insert(record("b", "m1", vec![1.0, 0.0])).unwrap();
        store.insert(record("a", "m0", vec![1.0, 0.0])).unwrap();
        store.insert(record("c", "m2", vec![0.0, 1.0])).unwrap();
        // Exact query vector present: that record wins; ties on equal
        // similarity go to the smallest doc_id.
        let hit = top1(&store, &[1.0, 0.0]).unwrap();
        assert_eq!(hit.doc_id, "a");

        // Verify the argmax against explicitly computed similarities.
        let query = [0.9, 0.1];
        let best_by_hand = store
            .records()
            .iter()
            .map(|r| (cosine(&query, &r.vector).unwrap(), r.doc_id.clone()))
            .fold((f64::NEG_INFINITY, String::new()), |acc, (s, id)| {
                if s > acc.0 || (s == acc.0 && id < acc.1) {
                    (s, id)
                } else {
                    acc
                }
            });
        assert_eq!(top1(&store, &query).unwrap().doc_id, best_by_hand.1);

        let single = {
            let mut s = EmbeddingStore::new(2);
            s.insert(record("only", "m9", vec![0.0, 2.0])).unwrap();
            s
        };
        assert_eq!(top1(&single, &[1.0, 0.0]).unwrap().doc_id, "only");
        assert!(top1(&EmbeddingStore::new(2), &[1.0, 0.0]).is_err());
        assert!(top1(&store, &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn store_rejects_bad_records() {
        let mut store = EmbeddingStore::new(2);
        store.insert(record("a", "m0", vec![1.0, 0.0])).unwrap();
        assert!(store.insert(record("a", "m0", vec![0.0, 1.0])).is_err());
        assert!(store.insert(record("b", "m0", vec![0.0])).is_err());
        assert!(store.insert(record("c", "m0", vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn same_template_renders_are_more_similar() {
        // Two renders of one template (different seeds, so different PII
        // content) embed closer than renders of different templates.
        let templates = crate::synthdoc::builtin_templates(3);
        let mut vectors = Vec::new();
        for (ti, template) in templates.iter().enumerate() {
            for seed in 0..2u64 {
                let (img, _) = crate::synthdoc::render(template, 50 + seed).unwrap();
                vectors.push((ti, embed_thumbnail(&img).unwrap()));
            }
        }
        let mut min_same = 1.0f64;
        let mut max_cross = -1.0f64;
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                let sim = cosine(&vectors[i].1, &vectors[j].1).unwrap();
                if vectors[i].0 == vectors[j].0 {
                    min_same = min_same.min(sim);
                } else {
                    max_cross = max_cross.max(sim);
                }
            }
        }
        assert!(
            min_same > max_cross,
            "same-template min {min_same} vs cross-template max {max_cross}"
        );
    }

    #[test]
    fn accuracy_counts_model_hits() {
        let mut store = EmbeddingStore::new(2);
        store.insert(record("a", "m0", vec![1.0, 0.0])).unwrap();
        store.insert(record("b", "m1", vec![0.0, 1.0])).unwrap();
        let queries = vec![
            (vec![0.9, 0.1], "m0".to_string()),
            (vec![0.1, 0.9], "m1".to_string()),
        ];
        assert_eq!(retrieval_accuracy(&store, &queries).unwrap(), 1.0);

        let wrong = vec![
            (vec![0.9, 0.1], "m1".to_string()),
            (vec![0.1, 0.9], "m0".to_string()),
        ];
        assert_eq!(retrieval_accuracy(&store, &wrong).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant(
            seed in any::<u64>(),
            alpha in 0.001..1000.0f64,
        ) {
            let mut rng = rng::from_seed(seed);
            let u: Vec<f64> = (0..8).map(|_| rng::range_f64(&mut rng, -1.0, 1.0) + 0.01).collect();
            let v: Vec<f64> = (0..8).map(|_| rng::range_f64(&mut rng, -1.0, 1.0) + 0.01).collect();
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let a = cosine(&u, &v).unwrap();
            let b = cosine(&scaled, &v).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn top1_invariant_under_uniform_store_scaling(seed in any::<u64>(), alpha in 0.01..100.0f64) {
            let mut rng = rng::from_seed(seed);
            let mut store = EmbeddingStore::new(4);
            let mut scaled = EmbeddingStore::new(4);
            for i in 0..6 {
                let v: Vec<f64> = (0..4).map(|_| rng::range_f64(&mut rng, -1.0, 1.0) + 0.01).collect();
                store.insert(record(&format!("d{i}"), &format!("m{}", i % 2), v.clone())).unwrap();
                scaled
                    .insert(record(&format!("d{i}"), &format!("m{}", i % 2), v.iter().map(|x| x * alpha).collect()))
                    .unwrap();
            }
            let q: Vec<f64> = (0..4).map(|_| rng::range_f64(&mut rng, -1.0, 1.0) + 0.01).collect();
            prop_assert_eq!(
                &top1(&store, &q).unwrap().doc_id,
                &top1(&scaled, &q).unwrap().doc_id
            );
        }
    }
}
