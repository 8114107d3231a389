use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use proxyforge::dataset::{
    clean_manifest, plan_open_set_split, CleanConfig, CleanReport, ManifestRecord, MergeMap,
    SplitFractions, SplitPlan, DEFAULT_MIN_INSTANCES, DEFAULT_MIN_SIDE_PX, DEFAULT_SMALL_CLASS_MIN,
};
use proxyforge::io::{read_json, write_jsonl_with_header};

use crate::common::{config_hash, header, invalid, read_jsonl, write_json, ConfigDoc};

#[derive(clap::Args)]
pub struct CleanArgs {
    /// Cleaning config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input manifest (JSON lines); repeat for several sources
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// Merge map (JSON object old -> canonical); the built-in three-entry map by default
    #[arg(long)]
    merge_map: Option<PathBuf>,
    /// Records with a smaller bbox side are dropped [default: 10]
    #[arg(long)]
    min_side_px: Option<f64>,
    /// Classes with fewer records are dropped [default: 20]
    #[arg(long)]
    min_instances: Option<usize>,
    /// Cleaned manifest output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report of dropped counts [default: <out>.report.json]
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct SplitArgs {
    /// Split config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input manifest (JSON lines); repeat for several sources
    #[arg(long = "manifest")]
    manifests: Vec<PathBuf>,
    /// train,val,test class fractions [default: 0.64,0.16,0.20]
    #[arg(long, value_delimiter = ',', num_args = 3)]
    fractions: Option<Vec<f64>>,
    /// Classes with fewer samples always go to train [default: 20]
    #[arg(long)]
    small_class_min: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Split plan output
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_min_side() -> f64 {
    DEFAULT_MIN_SIDE_PX
}
fn default_min_instances() -> usize {
    DEFAULT_MIN_INSTANCES
}
fn default_small_class_min() -> usize {
    DEFAULT_SMALL_CLASS_MIN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanCommandConfig {
    pub manifests: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_map: Option<PathBuf>,
    #[serde(default = "default_min_side")]
    pub min_side_px: f64,
    #[serde(default = "default_min_instances")]
    pub min_instances: usize,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCommandConfig {
    pub manifests: Vec<PathBuf>,
    #[serde(default)]
    pub fractions: SplitFractions,
    #[serde(default = "default_small_class_min")]
    pub small_class_min: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CleanReportFile<'a> {
    config_hash: &'a str,
    merge_map: &'a MergeMap,
    report: &'a CleanReport,
}

#[derive(Serialize)]
struct SplitFile<'a> {
    config_hash: &'a str,
    fractions: SplitFractions,
    small_class_min: usize,
    seed: u64,
    counts: BTreeMap<&'static str, usize>,
    plan: &'a SplitPlan,
}

fn read_manifests(paths: &[PathBuf]) -> Result<Vec<ManifestRecord>> {
    if paths.is_empty() {
        return Err(invalid("at least one --manifest is required"));
    }
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_jsonl::<ManifestRecord>(p)?);
    }
    Ok(out)
}

fn manifest_paths(doc: &mut ConfigDoc, flags: &[PathBuf]) -> Result<()> {
    if !flags.is_empty() {
        doc.set(&["manifests"], Some(flags))?;
    }
    Ok(())
}

fn load_merge_map(path: Option<&Path>) -> Result<MergeMap> {
    match path {
        None => Ok(MergeMap::default()),
        Some(p) => read_json(p).with_context(|| format!("reading merge map {}", p.display())),
    }
}

pub fn run_clean(a: CleanArgs) -> Result<()> {
    let mut doc = ConfigDoc::load(a.config.as_deref())?;
    manifest_paths(&mut doc, &a.manifests)?;
    doc.set(&["merge_map"], a.merge_map.as_ref())?;
    doc.set(&["min_side_px"], a.min_side_px)?;
    doc.set(&["min_instances"], a.min_instances)?;
    doc.set(&["out"], a.out.as_ref())?;
    doc.set(&["report"], a.report.as_ref())?;
    let cfg: CleanCommandConfig = doc.finish("clean")?;
    let hash = config_hash(&cfg, &["out", "report"])?;

    let merge = load_merge_map(cfg.merge_map.as_deref())?;
    let records = read_manifests(&cfg.manifests)?;
    let clean_cfg = CleanConfig {
        min_side_px: cfg.min_side_px,
        min_instances: cfg.min_instances,
    };
    let (kept, report) = clean_manifest(&records, &merge, &clean_cfg)?;
    write_jsonl_with_header(&cfg.out, &header("manifest", &hash), &kept)
        .with_context(|| format!("writing {}", cfg.out.display()))?;
    let report_path = cfg
        .report
        .clone()
        .unwrap_or_else(|| cfg.out.with_extension("report.json"));
    write_json(
        &report_path,
        &CleanReportFile {
            config_hash: &hash,
            merge_map: &merge,
            report: &report,
        },
    )?;
    println!(
        "kept {} of {} records in {} classes (renamed {}, merged {}, duplicates {}, small {}, rare-class {})",
        report.output,
        report.input,
        report.output_classes,
        report.renamed,
        report.merged,
        report.dropped_duplicates,
        report.dropped_small,
        report.dropped_rare_class
    );
    Ok(())
}

pub fn run_split(a: SplitArgs) -> Result<()> {
    let mut doc = ConfigDoc::load(a.config.as_deref())?;
    manifest_paths(&mut doc, &a.manifests)?;
    if let Some(f) = &a.fractions {
        let fr = SplitFractions {
            train: f[0],
            val: f[1],
            test: f[2],
        };
        doc.set(&["fractions"], Some(fr))?;
    }
    doc.set(&["small_class_min"], a.small_class_min)?;
    doc.set(&["seed"], a.seed)?;
    doc.set(&["out"], a.out.as_ref())?;
    doc.seed_fallback(&["seed"])?;
    let cfg: SplitCommandConfig = doc.finish("split")?;
    let hash = config_hash(&cfg, &["out"])?;

    let records = read_manifests(&cfg.manifests)?;
    let plan = plan_open_set_split(&records, &cfg.fractions, cfg.small_class_min, cfg.seed)?;
    let [train, val, test] = plan.counts();
    println!("{train} train, {val} val, {test} test classes");
    write_json(
        &cfg.out,
        &SplitFile {
            config_hash: &hash,
            fractions: cfg.fractions,
            small_class_min: cfg.small_class_min,
            seed: cfg.seed,
            counts: [("train", train), ("val", val), ("test", test)].into_iter().collect(),
            plan: &plan,
        },
    )
}
