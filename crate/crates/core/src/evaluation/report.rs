use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluation::nmi::nmi;
use crate::evaluation::retrieval::{recall_at_1, EvalItem, Prediction};

/// Queries with a minimum side up to this many pixels count as small.
pub const SMALL_MAX_PX: f64 = 70.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub small_max_px: f64,
    /// Seed for the k-means behind NMI; `None` skips NMI.
    pub nmi_seed: Option<u64>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            small_max_px: SMALL_MAX_PX,
            nmi_seed: Some(0),
        }
    }
}

/// Recall@1 per partition; `None` when the partition has no queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecall {
    pub query_vs_gallery: Option<f64>,
    pub all_vs_all: Option<f64>,
    pub text: Option<f64>,
    pub small: Option<f64>,
    pub large: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at_1: PartitionRecall,
    pub nmi: Option<f64>,
    pub num_queries: usize,
    pub num_gallery: usize,
    /// Query-vs-gallery predictions, one per query.
    pub predictions: Vec<Prediction>,
}

fn recall_of(queries: Vec<EvalItem>, reference: &[EvalItem]) -> Result<Option<f64>> {
    if queries.is_empty() {
        return Ok(None);
    }
    Ok(Some(recall_at_1(&queries, reference)?.recall))
}

/// Recall@1 of the queries against the gallery, overall and for the text,
/// small (`min_side <= small_max_px`) and large query subsets, plus
/// all-vs-all recall over the union of both sets.
pub fn partition_report(queries: &[EvalItem], gallery: &[EvalItem], cfg: &ReportConfig) -> Result<EvalReport> {
    let (query_vs_gallery, predictions) = if queries.is_empty() {
        (None, Vec::new())
    } else {
        let r = recall_at_1(queries, gallery)?;
        (Some(r.recall), r.predictions)
    };
    let subset = |pred: &dyn Fn(&EvalItem) -> bool| -> Vec<EvalItem> {
        queries.iter().filter(|q| pred(q)).cloned().collect()
    };
    let text = recall_of(subset(&|q| q.has_text), gallery)?;
    let small = recall_of(subset(&|q| q.min_side_px <= cfg.small_max_px), gallery)?;
    let large = recall_of(subset(&|q| q.min_side_px > cfg.small_max_px), gallery)?;

    let union: Vec<EvalItem> = queries.iter().chain(gallery).cloned().collect();
    let all_vs_all = if union.len() >= 2 {
        Some(recall_at_1(&union, &union)?.recall)
    } else {
        None
    };
    let nmi = match cfg.nmi_seed {
        Some(seed) if !union.is_empty() => {
            let emb: Vec<Vec<f64>> = union.iter().map(|i| i.embedding.clone()).collect();
            let labels: Vec<String> = union.iter().map(|i| i.class_id.clone()).collect();
            Some(nmi(&emb, &labels, seed)?)
        }
        _ => None,
    };
    Ok(EvalReport {
        recall_at_1: PartitionRecall {
            query_vs_gallery,
            all_vs_all,
            text,
            small,
            large,
        },
        nmi,
        num_queries: queries.len(),
        num_gallery: gallery.len(),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, class: &str, v: &[f64], side: f64) -> EvalItem {
        EvalItem::new(id, class, v.to_vec(), side)
    }

    #[test]
    fn absent_partitions() {
        let q = vec![item("q1", "a", &[1.0, 0.0], 200.0)];
        let g = vec![item("g1", "a", &[1.0, 0.1], 200.0), item("g2", "b", &[0.0, 1.0], 200.0)];
        let r = partition_report(&q, &g, &ReportConfig::default()).unwrap();
        assert_eq!(r.recall_at_1.small, None);
        assert_eq!(r.recall_at_1.text, None);
        assert_eq!(r.recall_at_1.large, Some(1.0));
        assert_eq!(r.predictions.len(), 1);
    }

    #[test]
    fn seventy_pixels_is_small() {
        let q = vec![item("q1", "a", &[1.0, 0.0], 70.0)];
        let g = vec![item("g1", "a", &[1.0, 0.1], 200.0)];
        let r = partition_report(&q, &g, &ReportConfig::default()).unwrap();
        assert_eq!(r.recall_at_1.small, Some(1.0));
        assert_eq!(r.recall_at_1.large, None);
    }

    #[test]
    fn all_vs_all_with_colocated_members() {
        let q = vec![item("a1", "a", &[1.0, 0.0], 90.0), item("b1", "b", &[0.0, 1.0], 90.0)];
        let g = vec![item("a2", "a", &[1.0, 0.0], 90.0), item("b2", "b", &[0.0, 1.0], 90.0)];
        let r = partition_report(&q, &g, &ReportConfig::default()).unwrap();
        assert_eq!(r.recall_at_1.all_vs_all, Some(1.0));
        assert_eq!(r.nmi, Some(1.0));
    }
}
