use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use proxyforge::evaluation::recall_at_1;
use proxyforge::io::{read_json, write_jsonl_with_header, EmbeddingRecord};
use proxyforge::losses::{LabelSpace, LossKind};
use proxyforge::mining::{build_confusion_matrix, build_hard_negative_map, HardNegativeMap, MiningConfig};
use proxyforge::sampling::SamplerConfig;
use proxyforge::training::{
    embed_dataset, generate_synthetic, write_checkpoint, EmbedderModel, EpochRecord, LabeledDataset,
    OptimizerConfig, SyntheticDatasetConfig, TrainState, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::common::{config_hash, create_dir, header, invalid, read_jsonl, write_json, ConfigDoc};

#[derive(clap::Args)]
pub struct Args {
    /// Experiment config (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training features (JSON lines of {id, class, min_side_px, vec})
    #[arg(long)]
    features: Option<PathBuf>,
    /// Generate the training set from this synthetic dataset config instead
    #[arg(long, conflicts_with = "features")]
    synthetic: Option<PathBuf>,
    /// proxynca_pp or proxyncahn_pp
    #[arg(long)]
    loss: Option<String>,
    /// Hard-negative map (JSON) for proxyncahn_pp
    #[arg(long)]
    hard_negatives: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed classes per batch
    #[arg(long)]
    k: Option<usize>,
    /// Samples per class
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    trunk_lr: Option<f64>,
    #[arg(long)]
    fc_lr: Option<f64>,
    #[arg(long)]
    proxy_lr: Option<f64>,
    /// Continue the run saved in this output directory
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn default_holdout() -> usize {
    10
}

fn default_loss() -> LossKind {
    LossKind::ProxyNcaPp
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDatasetConfig>,
    /// Background classes: never anchors, only negatives.
    #[serde(default)]
    pub background: Vec<String>,
    /// Validation features; by default a per-class holdout of the training set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_features: Option<PathBuf>,
    #[serde(default = "default_holdout")]
    pub holdout_per_class: usize,
}

/// An empty `hidden` with no `embed_dim` (or `embed_dim == input_dim`) is an
/// identity-initialized linear embedder.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_negatives: Option<PathBuf>,
    /// Mine the map from a baseline run when no map file is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mining: Option<MiningConfig>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        match (&self.dataset.features, &self.dataset.synthetic) {
            (Some(_), Some(_)) => return Err(invalid("dataset: give either `features` or `synthetic`, not both")),
            (None, None) => return Err(invalid("dataset: `features` or `synthetic` is required")),
            _ => {}
        }
        if self.loss == LossKind::ProxyNcaHnPp && self.hard_negatives.is_none() && self.mining.is_none() {
            return Err(invalid(
                "loss proxyncahn_pp needs a hard-negative map (--hard-negatives) or a `mining` section",
            ));
        }
        if self.sampler.k == 0 || self.sampler.m == 0 {
            return Err(invalid("sampler.k and sampler.m must be positive"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    config_hash: String,
    config: Value,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    config_hash: String,
    state: TrainState,
}

#[derive(Serialize, Deserialize)]
pub struct MapFile {
    pub config_hash: String,
    pub hard_negatives: HardNegativeMap,
}

/// Accepts a stamped map file or a bare `{class: [negatives]}` object.
pub fn read_hard_negative_map(path: &Path) -> Result<HardNegativeMap> {
    let value: Value = read_json(path).with_context(|| format!("reading {}", path.display()))?;
    let inner = match value {
        Value::Object(mut m) if m.contains_key("hard_negatives") && m.contains_key("config_hash") => {
            m.remove("hard_negatives").expect("checked")
        }
        other => other,
    };
    serde_json::from_value(inner).map_err(|e| invalid(format!("{}: not a hard-negative map: {e}", path.display())))
}

fn parse_loss(s: &str) -> Result<LossKind> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| invalid(format!("unknown loss `{s}` (expected proxynca_pp or proxyncahn_pp)")))
}

fn resolve(a: &Args) -> Result<ExperimentConfig> {
    let mut doc = match (&a.config, &a.resume) {
        (Some(path), _) => ConfigDoc::load(Some(path))?,
        (None, Some(dir)) => {
            let path = dir.join("config.json");
            let file: ConfigFile = read_json(&path).with_context(|| format!("reading {}", path.display()))?;
            ConfigDoc::from_value(file.config)?
        }
        (None, None) => ConfigDoc::load(None)?,
    };
    doc.set(&["output_dir"], a.out.as_ref())?;
    if let Some(path) = &a.synthetic {
        let synth: Value = read_json(path).with_context(|| format!("reading {}", path.display()))?;
        doc.set(&["dataset", "synthetic"], Some(synth))?;
    }
    doc.set(&["dataset", "features"], a.features.as_ref())?;
    doc.set(&["loss"], a.loss.as_deref().map(parse_loss).transpose()?)?;
    doc.set(&["hard_negatives"], a.hard_negatives.as_ref())?;
    doc.set(&["optimizer", "epochs"], a.epochs)?;
    doc.set(&["optimizer", "sigma"], a.sigma)?;
    doc.set(&["sampler", "k"], a.k)?;
    doc.set(&["sampler", "m"], a.m)?;
    doc.set(&["sampler", "seed"], a.seed)?;
    for (group, lr) in [("trunk", a.trunk_lr), ("fc", a.fc_lr), ("proxy", a.proxy_lr)] {
        if lr.is_some() {
            if !doc.has(&["optimizer", group]) {
                let defaults = serde_json::to_value(OptimizerConfig::default())?;
                doc.set(&["optimizer", group], Some(&defaults[group]))?;
            }
            doc.set(&["optimizer", group, "lr"], lr)?;
        }
    }
    if doc.is_empty() {
        return Err(invalid("empty experiment config: pass --config"));
    }
    doc.seed_fallback(&["sampler", "seed"])?;
    let cfg: ExperimentConfig = doc.finish("experiment")?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_features(path: &Path, background: &[String]) -> Result<LabeledDataset> {
    let records: Vec<EmbeddingRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(invalid(format!("{}: no feature records", path.display())));
    }
    Ok(LabeledDataset::from_records(records, background))
}

struct Data {
    train: LabeledDataset,
    val: LabeledDataset,
    labels_base: LabelSpace,
    positives: Vec<String>,
    background: Vec<String>,
}

fn load_data(cfg: &ExperimentConfig) -> Result<Data> {
    let mut background = cfg.dataset.background.clone();
    let full = match (&cfg.dataset.features, &cfg.dataset.synthetic) {
        (Some(path), _) => load_features(path, &background)?,
        (None, Some(synth)) => {
            let ds = generate_synthetic(synth)?;
            background.extend(ds.background_classes());
            ds
        }
        _ => unreachable!("validated"),
    };
    background.sort();
    background.dedup();
    let (train, val) = match &cfg.dataset.val_features {
        Some(path) => (full, load_features(path, &background)?),
        None => full.holdout(cfg.dataset.holdout_per_class, cfg.sampler.seed),
    };
    let positives: Vec<String> = train
        .positive_classes()
        .into_iter()
        .filter(|c| !background.contains(c))
        .collect();
    let labels_base = LabelSpace::new(positives.clone(), background.clone(), HardNegativeMap::default())?;
    Ok(Data {
        train,
        val,
        labels_base,
        positives,
        background,
    })
}

fn build_model(cfg: &ExperimentConfig, input_dim: usize) -> EmbedderModel {
    let embed_dim = cfg.model.embed_dim.unwrap_or(input_dim);
    if cfg.model.hidden.is_empty() && embed_dim == input_dim {
        EmbedderModel::identity(input_dim)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.sampler.seed);
        EmbedderModel::new(input_dim, &cfg.model.hidden, embed_dim, &mut rng)
    }
}

fn print_epoch(stage: &str, r: &EpochRecord, total: usize) {
    println!(
        "{stage}epoch {}/{total} train_loss {:.6} val_loss {:.6} lr_fc {:.3e} lr_proxy {:.3e}",
        r.epoch, r.train_loss, r.val_loss, r.lr_fc, r.lr_proxy
    );
}

fn run_trainer(mut t: Trainer<'_>, stage: &str, total: usize) -> Result<TrainState> {
    while !t.is_finished() {
        let r = t.run_epoch()?;
        print_epoch(stage, &r, total);
    }
    Ok(t.into_state())
}

/// Trains a ProxyNCA++ baseline, retrieves the validation set against itself
/// and thresholds the resulting confusion matrix.
fn mine_from_baseline(cfg: &ExperimentConfig, data: &Data, mining: MiningConfig, hash: &str) -> Result<HardNegativeMap> {
    let model = build_model(cfg, data.train.samples[0].features.len());
    let t = Trainer::new(
        model,
        &data.train,
        &data.val,
        &data.labels_base,
        cfg.sampler,
        cfg.optimizer,
        LossKind::ProxyNcaPp,
    )?;
    let state = run_trainer(t, "baseline ", cfg.optimizer.epochs)?;
    let items = embed_dataset(&state.model, &data.val)?;
    let items: Vec<_> = items.into_iter().filter(|i| data.positives.contains(&i.class_id)).collect();
    if items.len() < 2 {
        return Err(invalid("mining needs at least two validation samples of positive classes"));
    }
    let preds = recall_at_1(&items, &items)?;
    let confusion = build_confusion_matrix(&data.positives, &preds.pairs())?;
    let map = build_hard_negative_map(&confusion, mining)?;
    let path = cfg.output_dir.join("base_history.jsonl");
    write_jsonl_with_header(&path, &header("history", hash), &state.history)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(map)
}

pub fn run(a: Args) -> Result<()> {
    let cfg = resolve(&a)?;
    let hash = config_hash(&cfg, &["output_dir"])?;
    let data = load_data(&cfg)?;
    create_dir(&cfg.output_dir)?;
    write_json(
        &cfg.output_dir.join("config.json"),
        &ConfigFile {
            config_hash: hash.clone(),
            config: serde_json::to_value(&cfg)?,
        },
    )?;

    let map_path = cfg.output_dir.join("hard_negatives.json");
    let labels = match cfg.loss {
        LossKind::ProxyNcaPp => data.labels_base.clone(),
        LossKind::ProxyNcaHnPp => {
            let map = match (&cfg.hard_negatives, &a.resume, cfg.mining) {
                (Some(path), _, _) => read_hard_negative_map(path)?,
                (None, Some(dir), Some(_)) => read_hard_negative_map(&dir.join("hard_negatives.json"))?,
                (None, None, Some(mining)) => mine_from_baseline(&cfg, &data, mining, &hash)?,
                (None, _, None) => unreachable!("validated"),
            };
            write_json(
                &map_path,
                &MapFile {
                    config_hash: hash.clone(),
                    hard_negatives: map.clone(),
                },
            )?;
            LabelSpace::new(data.positives.clone(), data.background.clone(), map)?
        }
    };

    let trainer = match &a.resume {
        Some(dir) => {
            let path = dir.join("train_state.json");
            let file: StateFile = read_json(&path).with_context(|| format!("reading {}", path.display()))?;
            if file.state.epoch > cfg.optimizer.epochs {
                return Err(invalid(format!(
                    "saved run already has {} epochs, more than the requested {}",
                    file.state.epoch, cfg.optimizer.epochs
                )));
            }
            Trainer::resume(file.state, &data.train, &data.val, &labels, cfg.sampler, cfg.optimizer, cfg.loss)?
        }
        None => {
            let model = build_model(&cfg, data.train.samples[0].features.len());
            Trainer::new(model, &data.train, &data.val, &labels, cfg.sampler, cfg.optimizer, cfg.loss)?
        }
    };
    let state = run_trainer(trainer, "", cfg.optimizer.epochs)?;

    let out = &cfg.output_dir;
    write_checkpoint(out.join("checkpoint.bin"), &state.model, &state.proxies, cfg.sampler.seed, &hash)
        .context("writing checkpoint")?;
    let history = out.join("history.jsonl");
    write_jsonl_with_header(&history, &header("history", &hash), &state.history)
        .with_context(|| format!("writing {}", history.display()))?;
    write_json(
        &out.join("train_state.json"),
        &StateFile {
            config_hash: hash.clone(),
            state,
        },
    )?;
    println!("wrote checkpoint.bin, history.jsonl, train_state.json to {} [config {}]", out.display(), &hash[..12]);
    Ok(())
}
