use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::Serialize;

use proxyforge::io::write_jsonl_with_header;
use proxyforge::training::synth::ClassInfo;
use proxyforge::training::{generate_synthetic, SyntheticDatasetConfig};

use crate::common::{config_hash, create_dir, header, invalid, write_json, ConfigDoc};

#[derive(clap::Args)]
pub struct Args {
    /// Synthetic dataset config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for features.jsonl, manifest.jsonl and dataset.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
    /// Number of confusable cohorts
    #[arg(long)]
    cohorts: Option<usize>,
    #[arg(long)]
    cohort_size: Option<usize>,
    #[arg(long)]
    cohort_offset: Option<f64>,
    #[arg(long)]
    text_class_fraction: Option<f64>,
    #[arg(long)]
    num_background_classes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    config_hash: &'a str,
    config: &'a SyntheticDatasetConfig,
    num_samples: usize,
    classes: &'a [ClassInfo],
}

pub fn run(a: Args) -> Result<()> {
    let mut doc = ConfigDoc::load(a.config.as_deref())?;
    doc.set(&["num_classes"], a.num_classes)?;
    doc.set(&["samples_per_class"], a.samples_per_class)?;
    doc.set(&["input_dim"], a.input_dim)?;
    doc.set(&["noise_scale"], a.noise_scale)?;
    doc.set(&["num_confusable_cohorts"], a.cohorts)?;
    doc.set(&["cohort_size"], a.cohort_size)?;
    doc.set(&["cohort_offset"], a.cohort_offset)?;
    doc.set(&["text_class_fraction"], a.text_class_fraction)?;
    doc.set(&["num_background_classes"], a.num_background_classes)?;
    doc.set(&["seed"], a.seed)?;
    if doc.is_empty() {
        return Err(invalid(
            "empty synthetic config: pass --config or at least --num-classes, --samples-per-class, --input-dim, --noise-scale",
        ));
    }
    doc.seed_fallback(&["seed"])?;
    let cfg: SyntheticDatasetConfig = doc.finish("synthetic dataset")?;
    cfg.validate()?;
    if cfg.num_confusable_cohorts > 0 && cfg.cohort_offset == 0.0 {
        eprintln!("warning: cohort_offset is 0, so every cohort's classes share one prototype and cannot be told apart");
    }

    let ds = generate_synthetic(&cfg)?;
    let hash = config_hash(&cfg, &[])?;
    create_dir(&a.out)?;
    let features = a.out.join("features.jsonl");
    write_jsonl_with_header(&features, &header("features", &hash), &ds.to_records())
        .with_context(|| format!("writing {}", features.display()))?;
    let manifest = a.out.join("manifest.jsonl");
    write_jsonl_with_header(&manifest, &header("manifest", &hash), &ds.to_manifest())
        .with_context(|| format!("writing {}", manifest.display()))?;
    write_json(
        &a.out.join("dataset.json"),
        &DatasetInfo {
            config_hash: &hash,
            config: &cfg,
            num_samples: ds.samples.len(),
            classes: &ds.classes,
        },
    )?;
    println!(
        "wrote {} samples of {} classes ({} background) to {} [config {}]",
        ds.samples.len(),
        ds.classes.len(),
        cfg.num_background_classes,
        a.out.display(),
        &hash[..12]
    );
    Ok(())
}
