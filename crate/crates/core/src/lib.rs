//! Proxy-based deep metric learning toolkit.
//!
//! The crate covers the whole desk-scale pipeline for open-set logo retrieval:
//!
//! - [`embedding`]: normalized squared distance and temperature-scaled similarity
//! - [`losses`]: ProxyNCA++, ProxyNCAHN++ (hard-negative denominators) and the
//!   symmetric image-text alignment loss, each with analytic gradients
//! - [`mining`]: confusion matrices and the thresholded hard-negative map
//! - [`sampling`]: hard-negative aware episodic batches (`km <= |B| <= 2km`)
//! - [`training`]: a small affine/GELU embedder, per-group AdamW, plateau
//!   scheduling, proxy initialization and a synthetic dataset generator
//! - [`evaluation`]: recall@1 with self-exclusion, partitioned reports and NMI
//! - [`dataset`]: manifest cleaning, filtering and open-set class splits

pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod mining;
pub mod sampling;
pub mod training;

pub use embedding::{Embedding, ProxyTable};
pub use error::{Error, Result};
