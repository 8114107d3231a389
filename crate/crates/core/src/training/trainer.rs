//! Epoch loop: sample batches, embed, compute the batch loss, backpropagate
//! into the trunk/fc/proxy groups and step AdamW; report the validation
//! monitor to the plateau scheduler once per epoch.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{norm, ProxyTable};
use crate::error::{Error, Result};
use crate::evaluation::{recall_at_1, EvalItem};
use crate::losses::{batch_loss, proxynca_pp_loss, BatchItem, LabelSpace, LossKind, Role};
use crate::sampling::{epoch_batches, epoch_rng, BatchEntry, DatasetIndex, SamplerConfig};
use crate::training::model::EmbedderModel;
use crate::training::optim::{
    adamw_step, AdamState, GroupConfig, Monitor, OptimizerConfig, PlateauScheduler,
};
use crate::training::synth::{LabeledDataset, Sample};

const DEGENERATE_NORM: f64 = 1e-8;

/// One history line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr_trunk: f64,
    pub lr_fc: f64,
    pub lr_proxy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_recall: Option<f64>,
}

/// Mean embedding per class under the current model. A mean with norm below
/// `1e-8` is replaced by a random unit vector drawn from `seed`.
pub fn init_proxies(
    model: &EmbedderModel,
    train: &LabeledDataset,
    classes: &[String],
    seed: u64,
) -> Result<ProxyTable> {
    let dim = model.embed_dim();
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = classes
        .iter()
        .map(|c| (c.as_str(), (vec![0.0; dim], 0)))
        .collect();
    for s in &train.samples {
        if let Some((sum, n)) = sums.get_mut(s.class.as_str()) {
            let e = model.forward(&s.features)?;
            for (a, b) in sum.iter_mut().zip(&e) {
                *a += b;
            }
            *n += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(classes.len());
    for c in classes {
        let (sum, n) = &sums[c.as_str()];
        if *n == 0 {
            return Err(Error::EmptyClass(c.clone()));
        }
        let mut mean: Vec<f64> = sum.iter().map(|x| x / *n as f64).collect();
        if norm(&mean) < DEGENERATE_NORM {
            mean = random_unit(&mut rng, dim);
        }
        entries.push((c.clone(), mean));
    }
    ProxyTable::new(entries)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub model: EmbedderModel,
    pub proxies: ProxyTable,
    pub adam_trunk: AdamState,
    pub adam_fc: AdamState,
    pub adam_proxy: AdamState,
    pub scheduler: PlateauScheduler,
    /// Current learning rates of (trunk, fc, proxy).
    pub lrs: [f64; 3],
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbedderModel,
    pub proxies: ProxyTable,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer<'a> {
    val: &'a LabeledDataset,
    labels: &'a LabelSpace,
    sampler: SamplerConfig,
    opt: OptimizerConfig,
    loss: LossKind,
    index: DatasetIndex,
    samples: HashMap<&'a str, &'a Sample>,
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Initializes proxies from class means of `model` on `train`.
    pub fn new(
        model: EmbedderModel,
        train: &'a LabeledDataset,
        val: &'a LabeledDataset,
        labels: &'a LabelSpace,
        sampler: SamplerConfig,
        opt: OptimizerConfig,
        loss: LossKind,
    ) -> Result<Self> {
        let positives: Vec<String> = labels.positive_classes().map(str::to_string).collect();
        let proxies = init_proxies(&model, train, &positives, sampler.seed)?;
        let fc = model.fc_offset();
        let total = model.params().len();
        let state = TrainState {
            epoch: 0,
            adam_trunk: AdamState::new(fc),
            adam_fc: AdamState::new(total - fc),
            adam_proxy: AdamState::new(proxies.len() * proxies.dim()),
            scheduler: PlateauScheduler::new(opt.plateau_patience, opt.plateau_factor, opt.monitor),
            lrs: [opt.trunk.lr, opt.fc.lr, opt.proxy.lr],
            history: Vec::new(),
            model,
            proxies,
        };
        Self::resume(state, train, val, labels, sampler, opt, loss)
    }

    /// Continues from a saved state.
    pub fn resume(
        state: TrainState,
        train: &'a LabeledDataset,
        val: &'a LabeledDataset,
        labels: &'a LabelSpace,
        sampler: SamplerConfig,
        opt: OptimizerConfig,
        loss: LossKind,
    ) -> Result<Self> {
        if !(opt.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        let mut index = DatasetIndex::default();
        let mut samples = HashMap::with_capacity(train.samples.len());
        for s in &train.samples {
            if s.features.len() != state.model.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: state.model.input_dim(),
                    got: s.features.len(),
                });
            }
            let bucket = if labels.is_positive(&s.class) {
                &mut index.positives
            } else if labels.is_background(&s.class) {
                &mut index.background
            } else {
                return Err(Error::UnknownClass(s.class.clone()));
            };
            bucket.entry(s.class.clone()).or_default().push(s.id.clone());
            if samples.insert(s.id.as_str(), s).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate sample id `{}`", s.id)));
            }
        }
        for c in labels.positive_classes() {
            if state.proxies.index_of(c).is_none() {
                return Err(Error::UnknownClass(c.to_string()));
            }
        }
        Ok(Self {
            val,
            labels,
            sampler,
            opt,
            loss,
            index,
            samples,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.opt.epochs
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            model: self.state.model,
            proxies: self.state.proxies,
            history: self.state.history,
        })
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch;
        let h = self.labels.hard_negatives();
        let mut rng = epoch_rng(self.sampler.seed, epoch as u64);
        let batches = epoch_batches(&self.index, h, &self.sampler, &mut rng)?;
        let lrs = self.state.lrs;
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in &batches {
            if let Some(loss) = self.step(&batch.entries)? {
                loss_sum += loss;
                n_batches += 1;
            }
        }
        let train_loss = if n_batches == 0 {
            0.0
        } else {
            loss_sum / n_batches as f64
        };
        let val_loss = self.validation_loss()?.unwrap_or(train_loss);
        let val_recall = match self.opt.monitor {
            Monitor::ValRecall => Some(self.validation_recall()?),
            Monitor::ValLoss => None,
        };
        let monitored = val_recall.unwrap_or(val_loss);
        let mut new_lrs = self.state.lrs.to_vec();
        self.state.scheduler.update(monitored, &mut new_lrs);
        self.state.lrs = [new_lrs[0], new_lrs[1], new_lrs[2]];
        self.state.epoch += 1;
        let record = EpochRecord {
            epoch: self.state.epoch,
            train_loss,
            val_loss,
            lr_trunk: lrs[0],
            lr_fc: lrs[1],
            lr_proxy: lrs[2],
            val_recall,
        };
        self.state.history.push(record.clone());
        Ok(record)
    }

    /// One optimizer step on a batch. Returns `None` when the batch holds no
    /// positive item (nothing to optimize).
    fn step(&mut self, entries: &[BatchEntry]) -> Result<Option<f64>> {
        let model = &self.state.model;
        let mut traces = Vec::with_capacity(entries.len());
        let mut items = Vec::with_capacity(entries.len());
        for e in entries {
            let s = self.samples[e.sample_id.as_str()];
            let trace = model.forward_trace(&s.features)?;
            items.push(BatchItem::new(
                e.sample_id.clone(),
                e.class_id.clone(),
                trace.output.clone(),
                e.role,
            ));
            traces.push(trace);
        }
        if !items.iter().any(|i| i.role != Role::Background) {
            return Ok(None);
        }
        let r = batch_loss(self.loss, &items, &self.state.proxies, self.labels, self.opt.sigma)?;

        let mut grads = vec![0.0; model.params().len()];
        for (trace, g) in traces.iter().zip(&r.grad_embeddings) {
            if g.iter().any(|x| *x != 0.0) {
                model.backward(trace, g, &mut grads);
            }
        }
        let proxy_grads: Vec<f64> = r.grad_proxies.iter().flatten().copied().collect();

        let [lr_trunk, lr_fc, lr_proxy] = self.state.lrs;
        let fc_off = model.fc_offset();
        let (trunk, fc) = self.state.model.groups_mut();
        let trunk_cfg = GroupConfig {
            lr: lr_trunk,
            ..self.opt.trunk
        };
        adamw_step(trunk, &grads[..fc_off], &mut self.state.adam_trunk, &trunk_cfg);
        let fc_cfg = GroupConfig {
            lr: lr_fc,
            ..self.opt.fc
        };
        adamw_step(fc, &grads[fc_off..], &mut self.state.adam_fc, &fc_cfg);
        let proxy_cfg = GroupConfig {
            lr: lr_proxy,
            ..self.opt.proxy
        };
        let mut flat = self.state.proxies.flatten();
        adamw_step(&mut flat, &proxy_grads, &mut self.state.adam_proxy, &proxy_cfg);
        self.state.proxies.assign_flat(&flat)?;
        Ok(Some(r.loss))
    }

    /// Mean ProxyNCA++ loss of validation samples whose class has a proxy;
    /// `None` when there are none (e.g. open-set validation classes).
    fn validation_loss(&self) -> Result<Option<f64>> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in &self.val.samples {
            if self.state.proxies.index_of(&s.class).is_none() {
                continue;
            }
            let e = self.state.model.forward(&s.features)?;
            let item = BatchItem::new(s.id.clone(), s.class.clone(), e, Role::Seed);
            sum += proxynca_pp_loss(&item, &self.state.proxies, self.opt.sigma)?.loss;
            n += 1;
        }
        Ok((n > 0).then(|| sum / n as f64))
    }

    /// All-vs-all recall@1 over the validation set.
    fn validation_recall(&self) -> Result<f64> {
        let items = embed_dataset(&self.state.model, self.val)?;
        if items.len() < 2 {
            return Ok(0.0);
        }
        Ok(recall_at_1(&items, &items)?.recall)
    }
}

/// Convenience wrapper: initialize proxies and run all epochs.
pub fn train(
    model: EmbedderModel,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    labels: &LabelSpace,
    sampler: SamplerConfig,
    opt: OptimizerConfig,
    loss: LossKind,
) -> Result<TrainOutcome> {
    Trainer::new(model, train_set, val_set, labels, sampler, opt, loss)?.run()
}

/// Embeds every sample of `dataset` as an evaluation item.
pub fn embed_dataset(model: &EmbedderModel, dataset: &LabeledDataset) -> Result<Vec<EvalItem>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            Ok(EvalItem::new(
                s.id.clone(),
                s.class.clone(),
                model.forward(&s.features)?,
                s.min_side_px,
            ))
        })
        .collect()
}
