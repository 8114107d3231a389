//! Episodic batch construction with hard negatives.
//!
//! A batch holds `k` seed classes with `m` samples each. For every seed class
//! (never for added classes) the sampler adds `m` samples of one hard-negative
//! class that is not yet in the batch, so `km <= |B| <= 2km` before any
//! optional background items.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::Role;
use crate::mining::HardNegativeMap;

/// Class → sample ids, split into positive and background classes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub positives: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub background: BTreeMap<String, Vec<String>>,
}

impl DatasetIndex {
    pub fn total_positive_samples(&self) -> usize {
        self.positives.values().map(Vec::len).sum()
    }

    fn validate(&self) -> Result<()> {
        for (class, ids) in self.positives.iter().chain(&self.background) {
            if ids.is_empty() {
                return Err(Error::EmptyClass(class.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Seed classes per batch.
    pub k: usize,
    /// Samples per class.
    pub m: usize,
    pub seed: u64,
    /// Background items appended to every batch.
    #[serde(default)]
    pub background_per_batch: usize,
}

impl SamplerConfig {
    pub fn new(k: usize, m: usize, seed: u64) -> Self {
        Self {
            k,
            m,
            seed,
            background_per_batch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub sample_id: String,
    pub class_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batch {
    pub seed_classes: Vec<String>,
    pub hard_negative_classes: Vec<String>,
    pub entries: Vec<BatchEntry>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// RNG for one epoch of a run: one ChaCha stream per epoch under `seed`.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

fn draw<R: Rng>(rng: &mut R, ids: &[String], m: usize) -> Vec<String> {
    if ids.len() >= m {
        index::sample(rng, ids.len(), m)
            .into_iter()
            .map(|i| ids[i].clone())
            .collect()
    } else {
        (0..m).map(|_| ids[rng.random_range(0..ids.len())].clone()).collect()
    }
}

pub fn sample_batch<R: Rng>(
    dataset: &DatasetIndex,
    h: &HardNegativeMap,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Batch> {
    if cfg.k == 0 || cfg.m == 0 {
        return Err(Error::InvalidConfig("k and m must be positive".into()));
    }
    dataset.validate()?;
    let classes: Vec<&String> = dataset.positives.keys().collect();
    if classes.len() < cfg.k {
        return Err(Error::InsufficientClasses {
            needed: cfg.k,
            available: classes.len(),
        });
    }

    let seed_classes: Vec<String> = index::sample(rng, classes.len(), cfg.k)
        .into_iter()
        .map(|i| classes[i].clone())
        .collect();
    let mut present: HashSet<&str> = seed_classes.iter().map(String::as_str).collect();
    let mut entries = Vec::with_capacity(2 * cfg.k * cfg.m + cfg.background_per_batch);
    for class in &seed_classes {
        for id in draw(rng, &dataset.positives[class], cfg.m) {
            entries.push(BatchEntry {
                sample_id: id,
                class_id: class.clone(),
                role: Role::Seed,
            });
        }
    }

    let mut hard_negative_classes = Vec::new();
    for class in &seed_classes {
        let mut candidates: Vec<&String> = h.get(class).iter().collect();
        candidates.shuffle(rng);
        let pick = candidates.into_iter().find(|c| {
            !present.contains(c.as_str())
                && (dataset.positives.contains_key(*c) || dataset.background.contains_key(*c))
        });
        let Some(neg) = pick else { continue };
        let (ids, role) = match dataset.positives.get(neg) {
            Some(ids) => (ids, Role::HardNegative),
            None => (&dataset.background[neg], Role::Background),
        };
        for id in draw(rng, ids, cfg.m) {
            entries.push(BatchEntry {
                sample_id: id,
                class_id: neg.clone(),
                role,
            });
        }
        present.insert(neg.as_str());
        hard_negative_classes.push(neg.clone());
    }

    if cfg.background_per_batch > 0 && !dataset.background.is_empty() {
        let bg: Vec<(&String, &String)> = dataset
            .background
            .iter()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (c, id)))
            .collect();
        for _ in 0..cfg.background_per_batch {
            let (c, id) = bg[rng.random_range(0..bg.len())];
            entries.push(BatchEntry {
                sample_id: id.clone(),
                class_id: c.clone(),
                role: Role::Background,
            });
        }
    }

    Ok(Batch {
        seed_classes,
        hard_negative_classes,
        entries,
    })
}

/// `ceil(total positive samples / (k m))` independently sampled batches.
pub fn epoch_batches<R: Rng>(
    dataset: &DatasetIndex,
    h: &HardNegativeMap,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if cfg.k == 0 || cfg.m == 0 {
        return Err(Error::InvalidConfig("k and m must be positive".into()));
    }
    let count = dataset.total_positive_samples().div_ceil(cfg.k * cfg.m);
    (0..count).map(|_| sample_batch(dataset, h, cfg, rng)).collect()
}
