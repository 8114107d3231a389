use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use proxyforge::evaluation::Prediction;
use proxyforge::io::read_json;
use proxyforge::mining::{
    build_confusion_matrix, build_hard_negative_map, MiningConfig, DEFAULT_ALPHA1, DEFAULT_ALPHA2,
    DEFAULT_LEV_MIN,
};

use crate::common::{config_hash, invalid, read_jsonl, write_json, ConfigDoc};
use crate::train::MapFile;

#[derive(clap::Args)]
pub struct Args {
    /// Mining config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Predictions: an `eval` report or its --predictions JSON lines
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Lower confusion threshold [default: 0.05]
    #[arg(long)]
    alpha1: Option<f64>,
    /// Upper confusion threshold [default: 0.35]
    #[arg(long)]
    alpha2: Option<f64>,
    /// Class names must be more than this many edits apart [default: 2]
    #[arg(long)]
    lev_min: Option<usize>,
    /// Output map file
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_alpha1() -> f64 {
    DEFAULT_ALPHA1
}
fn default_alpha2() -> f64 {
    DEFAULT_ALPHA2
}
fn default_lev_min() -> usize {
    DEFAULT_LEV_MIN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineConfig {
    pub predictions: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default = "default_alpha2")]
    pub alpha2: f64,
    #[serde(default = "default_lev_min")]
    pub lev_min: usize,
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    // A whole-file JSON object with a `report` is an eval report.
    if let Ok(Value::Object(mut file)) = read_json::<Value>(path) {
        if let Some(mut report) = file.remove("report") {
            let preds = report
                .get_mut("predictions")
                .map(Value::take)
                .ok_or_else(|| invalid(format!("{}: report has no predictions", path.display())))?;
            return serde_json::from_value(preds)
                .with_context(|| format!("{}: malformed predictions", path.display()));
        }
    }
    read_jsonl(path)
}

pub fn run(a: Args) -> Result<()> {
    let mut doc = ConfigDoc::load(a.config.as_deref())?;
    doc.set(&["predictions"], a.predictions.as_ref())?;
    doc.set(&["out"], a.out.as_ref())?;
    doc.set(&["alpha1"], a.alpha1)?;
    doc.set(&["alpha2"], a.alpha2)?;
    doc.set(&["lev_min"], a.lev_min)?;
    let cfg: MineConfig = doc.finish("mining")?;
    let hash = config_hash(&cfg, &["out"])?;

    let preds = read_predictions(&cfg.predictions)?;
    if preds.is_empty() {
        return Err(invalid(format!("{}: no predictions", cfg.predictions.display())));
    }
    let classes: Vec<String> = preds
        .iter()
        .flat_map(|p| [p.true_class.clone(), p.predicted_class.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pairs: Vec<(&str, &str)> = preds
        .iter()
        .map(|p| (p.true_class.as_str(), p.predicted_class.as_str()))
        .collect();
    let confusion = build_confusion_matrix(&classes, &pairs)?;
    let mining = MiningConfig {
        alpha1: cfg.alpha1,
        alpha2: cfg.alpha2,
        lev_min: cfg.lev_min,
    };
    let map = build_hard_negative_map(&confusion, mining)?;
    let pairs_found: usize = map.iter().map(|(_, v)| v.len()).sum();
    println!(
        "{} classes with hard negatives ({pairs_found} pairs) from {} predictions over {} classes",
        map.len(),
        preds.len(),
        classes.len()
    );
    write_json(
        &cfg.out,
        &MapFile {
            config_hash: hash,
            hard_negatives: map,
        },
    )
}
