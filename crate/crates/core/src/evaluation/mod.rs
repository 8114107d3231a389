//! Retrieval evaluation: recall@1 with self-exclusion, partitioned
//! reporting and clustering quality.

pub mod nmi;
pub mod report;
pub mod retrieval;

pub use nmi::{kmeans, nmi, nmi_from_labels};
pub use report::{partition_report, EvalReport, PartitionRecall, ReportConfig};
pub use retrieval::{
    nearest_neighbor, recall_at_1, recall_at_k, split_query_gallery, EvalItem, Prediction,
    RecallResult,
};
