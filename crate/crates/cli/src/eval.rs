use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use proxyforge::evaluation::{partition_report, split_query_gallery, EvalItem, EvalReport, ReportConfig};
use proxyforge::io::{write_jsonl_with_header, EmbeddingRecord};
use proxyforge::training::read_checkpoint;

use crate::common::{config_hash, header, invalid, read_jsonl, write_json, ConfigDoc};

#[derive(clap::Args)]
pub struct Args {
    /// Eval config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluation features (JSON lines)
    #[arg(long)]
    features: Option<PathBuf>,
    /// Where to write the report JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// `split`: per-class query/gallery split; `full`: every item queries the whole set
    #[arg(long)]
    mode: Option<EvalMode>,
    /// Queries per class in split mode [default: 10]
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Largest min side (px) counted as small [default: 70]
    #[arg(long)]
    small_max_px: Option<f64>,
    /// Skip the k-means NMI
    #[arg(long)]
    no_nmi: bool,
    /// Also write per-query predictions (JSON lines) for `mine`
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Split,
    Full,
}

fn default_mode() -> EvalMode {
    EvalMode::Split
}
fn default_per_class() -> usize {
    10
}
fn default_small() -> f64 {
    proxyforge::evaluation::report::SMALL_MAX_PX
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub report: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_small")]
    pub small_max_px: f64,
    #[serde(default = "yes")]
    pub nmi: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

/// Report file layout.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub config_hash: String,
    pub checkpoint_config_hash: String,
    pub config: EvalConfig,
    pub report: EvalReport,
}

pub fn run(a: Args) -> Result<()> {
    let mut doc = ConfigDoc::load(a.config.as_deref())?;
    doc.set(&["checkpoint"], a.checkpoint.as_ref())?;
    doc.set(&["features"], a.features.as_ref())?;
    doc.set(&["report"], a.report.as_ref())?;
    doc.set(&["mode"], a.mode)?;
    doc.set(&["per_class"], a.per_class)?;
    doc.set(&["seed"], a.seed)?;
    doc.set(&["small_max_px"], a.small_max_px)?;
    doc.set(&["nmi"], a.no_nmi.then_some(false))?;
    doc.set(&["predictions"], a.predictions.as_ref())?;
    doc.seed_fallback(&["seed"])?;
    let cfg: EvalConfig = doc.finish("eval")?;
    let hash = config_hash(&cfg, &["report", "predictions"])?;

    let ck = read_checkpoint(&cfg.checkpoint)
        .with_context(|| format!("reading checkpoint {}", cfg.checkpoint.display()))?;
    let records: Vec<EmbeddingRecord> = read_jsonl(&cfg.features)?;
    if records.is_empty() {
        return Err(invalid(format!("{}: no feature records", cfg.features.display())));
    }
    let items = records
        .into_iter()
        .map(|r| Ok(EvalItem::new(r.id, r.class, ck.model.forward(&r.vec)?, r.min_side_px)))
        .collect::<Result<Vec<_>>>()?;
    let (queries, gallery) = match cfg.mode {
        EvalMode::Full => (items.clone(), items),
        EvalMode::Split => split_query_gallery(&items, cfg.per_class, cfg.seed)?,
    };
    let report_cfg = ReportConfig {
        small_max_px: cfg.small_max_px,
        nmi_seed: cfg.nmi.then_some(cfg.seed),
    };
    let report = partition_report(&queries, &gallery, &report_cfg)?;

    if let Some(path) = &cfg.predictions {
        write_jsonl_with_header(path, &header("predictions", &hash), &report.predictions)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let r = &report.recall_at_1;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "recall@1 {} (all-vs-all {}, text {}, small {}, large {}), nmi {} over {} queries",
        show(r.query_vs_gallery),
        show(r.all_vs_all),
        show(r.text),
        show(r.small),
        show(r.large),
        show(report.nmi),
        report.num_queries
    );
    let report_path = cfg.report.clone();
    write_json(
        &report_path,
        &ReportFile {
            config_hash: hash,
            checkpoint_config_hash: ck.header.config_hash,
            config: cfg,
            report,
        },
    )
}
