use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_normalize, sq_dist};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub sample_id: String,
    pub class_id: String,
    pub embedding: Vec<f64>,
    /// Minimum side of the bounding box in pixels.
    pub min_side_px: f64,
    pub has_text: bool,
}

impl EvalItem {
    /// `has_text` is derived from the class name.
    pub fn new(
        sample_id: impl Into<String>,
        class_id: impl Into<String>,
        embedding: Vec<f64>,
        min_side_px: f64,
    ) -> Self {
        let class_id = class_id.into();
        Self {
            sample_id: sample_id.into(),
            has_text: class_id.contains("_text"),
            class_id,
            embedding,
            min_side_px,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub true_class: String,
    pub predicted_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallResult {
    pub recall: f64,
    pub predictions: Vec<Prediction>,
}

impl RecallResult {
    /// `(true, predicted)` pairs for confusion-matrix construction.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.predictions
            .iter()
            .map(|p| (p.true_class.clone(), p.predicted_class.clone()))
            .collect()
    }
}

/// Reference items with their directions precomputed.
struct Reference<'a> {
    items: &'a [EvalItem],
    unit: Vec<Vec<f64>>,
}

impl<'a> Reference<'a> {
    fn new(items: &'a [EvalItem]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::EmptyReference);
        }
        let dim = items[0].embedding.len();
        let unit = items
            .iter()
            .map(|it| {
                if it.embedding.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: it.embedding.len(),
                    });
                }
                l2_normalize(&it.embedding)
            })
            .collect::<Result<_>>()?;
        Ok(Self { items, unit })
    }

    /// Reference indices ranked by (distance, sample id), skipping items that
    /// share the query's id. Only the first `k` are returned.
    fn ranked(&self, query: &EvalItem, k: usize) -> Result<Vec<usize>> {
        let dim = self.unit[0].len();
        if query.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: query.embedding.len(),
            });
        }
        let q = l2_normalize(&query.embedding)?;
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0)
                .then_with(|| self.items[a.1].sample_id.cmp(&self.items[b.1].sample_id))
        };
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, (item, u)) in self.items.iter().zip(&self.unit).enumerate() {
            if item.sample_id == query.sample_id {
                continue;
            }
            let cand = (sq_dist(&q, u), i);
            if best.len() == k && cmp(&cand, &best[k - 1]) != Ordering::Less {
                continue;
            }
            let pos = best.partition_point(|b| cmp(b, &cand) == Ordering::Less);
            best.insert(pos, cand);
            best.truncate(k);
        }
        if best.is_empty() {
            return Err(Error::EmptyReference);
        }
        Ok(best.into_iter().map(|(_, i)| i).collect())
    }
}

/// Class of the closest reference item under the normalized squared
/// distance; an item with the query's own id is skipped, so a query that is
/// part of the reference set is matched to its second-closest neighbor.
pub fn nearest_neighbor(query: &EvalItem, reference: &[EvalItem]) -> Result<String> {
    let r = Reference::new(reference)?;
    let idx = r.ranked(query, 1)?[0];
    Ok(reference[idx].class_id.clone())
}

pub fn recall_at_1(queries: &[EvalItem], reference: &[EvalItem]) -> Result<RecallResult> {
    if queries.is_empty() {
        return Err(Error::EmptySet);
    }
    let r = Reference::new(reference)?;
    let mut hits = 0usize;
    let mut predictions = Vec::with_capacity(queries.len());
    for q in queries {
        let idx = r.ranked(q, 1)?[0];
        let predicted = &reference[idx].class_id;
        if *predicted == q.class_id {
            hits += 1;
        }
        predictions.push(Prediction {
            query_id: q.sample_id.clone(),
            true_class: q.class_id.clone(),
            predicted_class: predicted.clone(),
        });
    }
    Ok(RecallResult {
        recall: hits as f64 / queries.len() as f64,
        predictions,
    })
}

/// Fraction of queries with a same-class item among their `k` nearest
/// references (same ranking and self-exclusion as [`recall_at_1`]).
pub fn recall_at_k(queries: &[EvalItem], reference: &[EvalItem], k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptySet);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let r = Reference::new(reference)?;
    let mut hits = 0usize;
    for q in queries {
        if r.ranked(q, k)?
            .iter()
            .any(|&i| reference[i].class_id == q.class_id)
        {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Per class, `min(per_class, count - 1)` random items become queries and the
/// rest the gallery. Both outputs keep the input order.
pub fn split_query_gallery(
    items: &[EvalItem],
    per_class: usize,
    seed: u64,
) -> Result<(Vec<EvalItem>, Vec<EvalItem>)> {
    if items.is_empty() {
        return Err(Error::EmptySet);
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be at least 1".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_class.entry(&it.class_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_query = vec![false; items.len()];
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let n = per_class.min(idx.len() - 1);
        for &i in &idx[..n] {
            is_query[i] = true;
        }
    }
    let (q, g): (Vec<_>, Vec<_>) = items.iter().zip(&is_query).partition(|(_, q)| **q);
    Ok((
        q.into_iter().map(|(it, _)| it.clone()).collect(),
        g.into_iter().map(|(it, _)| it.clone()).collect(),
    ))
}
