//! Synthetic labeled feature datasets.
//!
//! Each class gets a unit prototype direction in the input space; samples are
//! `prototype + noise`. Classes inside a confusable cohort share one base
//! direction and differ only by `cohort_offset`, which makes them near
//! duplicates in the way visually similar logos are.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::ManifestRecord;
use crate::embedding::norm;
use crate::error::{Error, Result};
use crate::io::EmbeddingRecord;
use crate::mining::levenshtein;

/// Log-normal distribution of the pseudo bounding-box minimum side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub median_px: f64,
    pub log_std: f64,
}

impl Default for SizeDistribution {
    fn default() -> Self {
        Self {
            median_px: 80.0,
            log_std: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDatasetConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Expected Euclidean norm of the per-sample noise (prototypes are unit).
    pub noise_scale: f64,
    #[serde(default)]
    pub num_confusable_cohorts: usize,
    #[serde(default = "default_cohort_size")]
    pub cohort_size: usize,
    #[serde(default)]
    pub cohort_offset: f64,
    #[serde(default)]
    pub text_class_fraction: f64,
    #[serde(default)]
    pub size_distribution: SizeDistribution,
    #[serde(default)]
    pub num_background_classes: usize,
    pub seed: u64,
}

fn default_cohort_size() -> usize {
    3
}

impl SyntheticDatasetConfig {
    pub fn separable(seed: u64) -> Self {
        Self {
            num_classes: 20,
            samples_per_class: 50,
            input_dim: 32,
            noise_scale: 0.3,
            num_confusable_cohorts: 0,
            cohort_size: 3,
            cohort_offset: 0.0,
            text_class_fraction: 0.25,
            size_distribution: SizeDistribution::default(),
            num_background_classes: 0,
            seed,
        }
    }

    /// Four cohorts of three near-duplicate classes plus three loners.
    pub fn confusable(seed: u64) -> Self {
        Self {
            num_classes: 15,
            samples_per_class: 60,
            input_dim: 64,
            noise_scale: 0.8,
            num_confusable_cohorts: 4,
            cohort_size: 3,
            cohort_offset: 0.3,
            text_class_fraction: 0.2,
            size_distribution: SizeDistribution::default(),
            num_background_classes: 0,
            seed,
        }
    }

    /// The confusable layout with three background classes added.
    pub fn with_background(seed: u64) -> Self {
        Self {
            num_background_classes: 3,
            ..Self::confusable(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_classes == 0 || self.samples_per_class == 0 || self.input_dim == 0 {
            return bad("num_classes, samples_per_class and input_dim must be positive");
        }
        if self.num_confusable_cohorts > 0 && self.cohort_size < 2 {
            return bad("cohort_size must be at least 2");
        }
        if self.num_confusable_cohorts * self.cohort_size > self.num_classes {
            return bad("cohorts need more classes than num_classes");
        }
        if !(0.0..=1.0).contains(&self.text_class_fraction) {
            return bad("text_class_fraction must be in [0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.cohort_offset >= 0.0) {
            return bad("noise_scale and cohort_offset must be nonnegative");
        }
        if !(self.size_distribution.median_px > 0.0 && self.size_distribution.log_std >= 0.0) {
            return bad("invalid size distribution");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub has_text: bool,
    pub background: bool,
    pub cohort: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub class: String,
    pub features: Vec<f64>,
    pub min_side_px: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub classes: Vec<ClassInfo>,
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn positive_classes(&self) -> Vec<String> {
        self.classes
            .iter()
            .filter(|c| !c.background)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn background_classes(&self) -> Vec<String> {
        self.classes
            .iter()
            .filter(|c| c.background)
            .map(|c| c.name.clone())
            .collect()
    }

    /// Class names grouped by cohort id.
    pub fn cohorts(&self) -> Vec<Vec<String>> {
        let mut by: BTreeMap<usize, Vec<String>> = BTreeMap::new();
        for c in &self.classes {
            if let Some(k) = c.cohort {
                by.entry(k).or_default().push(c.name.clone());
            }
        }
        by.into_values().collect()
    }

    /// Builds a dataset from embedding-set records; class metadata is
    /// inferred from names and `background` lists the background classes.
    pub fn from_records(records: Vec<EmbeddingRecord>, background: &[String]) -> Self {
        let mut seen = BTreeMap::new();
        let samples: Vec<Sample> = records
            .into_iter()
            .map(|r| {
                seen.entry(r.class.clone()).or_insert(());
                Sample {
                    id: r.id,
                    class: r.class,
                    features: r.vec,
                    min_side_px: r.min_side_px,
                }
            })
            .collect();
        let classes = seen
            .into_keys()
            .map(|name| ClassInfo {
                has_text: name.contains("_text"),
                background: background.contains(&name),
                cohort: None,
                name,
            })
            .collect();
        Self { classes, samples }
    }

    pub fn to_records(&self) -> Vec<EmbeddingRecord> {
        self.samples
            .iter()
            .map(|s| EmbeddingRecord {
                id: s.id.clone(),
                class: s.class.clone(),
                min_side_px: s.min_side_px,
                vec: s.features.clone(),
            })
            .collect()
    }

    /// Keeps only samples whose class satisfies `keep`.
    pub fn filter_classes(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            classes: self.classes.iter().filter(|c| keep(&c.name)).cloned().collect(),
            samples: self.samples.iter().filter(|s| keep(&s.class)).cloned().collect(),
        }
    }

    /// Per-class sample holdout: `held_out` random samples of every class go
    /// to the second set (at most `count - 1`).
    pub fn holdout(&self, held_out: usize, seed: u64) -> (Self, Self) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            by_class.entry(&s.class).or_default().push(i);
        }
        let mut out = vec![false; self.samples.len()];
        for idx in by_class.values_mut() {
            idx.shuffle(&mut rng);
            let n = held_out.min(idx.len().saturating_sub(1));
            for &i in &idx[..n] {
                out[i] = true;
            }
        }
        let pick = |flag: bool| Self {
            classes: self.classes.clone(),
            samples: self
                .samples
                .iter()
                .zip(&out)
                .filter(|(_, o)| **o == flag)
                .map(|(s, _)| s.clone())
                .collect(),
        };
        (pick(false), pick(true))
    }

    /// Manifest view: one record per sample with a square-ish box whose
    /// minimum side is the sample's `min_side_px`; the content hash covers
    /// the feature payload.
    pub fn to_manifest(&self) -> Vec<ManifestRecord> {
        self.samples
            .iter()
            .map(|s| {
                let side = s.min_side_px;
                let mut hasher = Sha256::new();
                for v in &s.features {
                    hasher.update(v.to_le_bytes());
                }
                ManifestRecord {
                    image_id: s.id.clone(),
                    source_dataset: "synthetic".into(),
                    class_name: s.class.clone(),
                    bbox: [0.0, 0.0, side * 1.5, side],
                    image_w: (side * 1.5).ceil() as u32,
                    image_h: side.ceil() as u32,
                    content_hash: hex::encode(hasher.finalize()),
                }
            })
            .collect()
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn random_name<R: Rng>(rng: &mut R, taken: &[String]) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
    loop {
        let name: String = (0..7)
            .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
            .collect();
        if taken.iter().all(|t| levenshtein(t, &name) > 3) {
            return name;
        }
    }
}

pub fn generate_synthetic(cfg: &SyntheticDatasetConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.input_dim;

    let mut stems = Vec::new();
    for _ in 0..cfg.num_classes + cfg.num_background_classes {
        let n = random_name(&mut rng, &stems);
        stems.push(n);
    }
    let n_text = (cfg.text_class_fraction * cfg.num_classes as f64).round() as usize;
    let mut text_flags: Vec<bool> = (0..cfg.num_classes).map(|i| i < n_text).collect();
    text_flags.shuffle(&mut rng);

    let mut classes = Vec::new();
    let mut prototypes = Vec::new();
    let in_cohorts = cfg.num_confusable_cohorts * cfg.cohort_size;
    let mut base = Vec::new();
    for i in 0..cfg.num_classes {
        let cohort = (i < in_cohorts).then(|| i / cfg.cohort_size);
        let proto = match cohort {
            Some(_) => {
                if i % cfg.cohort_size == 0 {
                    base = random_unit(&mut rng, d);
                }
                let dir = random_unit(&mut rng, d);
                let v: Vec<f64> = base
                    .iter()
                    .zip(&dir)
                    .map(|(b, e)| b + cfg.cohort_offset * e)
                    .collect();
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            }
            None => random_unit(&mut rng, d),
        };
        let stem = &stems[i];
        let name = match (cohort, text_flags[i]) {
            (Some(c), true) => format!("c{c}_{stem}_text"),
            (Some(c), false) => format!("c{c}_{stem}"),
            (None, true) => format!("{stem}_text"),
            (None, false) => stem.clone(),
        };
        classes.push(ClassInfo {
            name,
            has_text: text_flags[i],
            background: false,
            cohort,
        });
        prototypes.push(proto);
    }
    for b in 0..cfg.num_background_classes {
        classes.push(ClassInfo {
            name: format!("bg_{}", stems[cfg.num_classes + b]),
            has_text: false,
            background: true,
            cohort: None,
        });
        prototypes.push(random_unit(&mut rng, d));
    }

    let per_coord = cfg.noise_scale / (d as f64).sqrt();
    let mut samples = Vec::with_capacity(classes.len() * cfg.samples_per_class);
    for (class, proto) in classes.iter().zip(&prototypes) {
        for j in 0..cfg.samples_per_class {
            let features = proto
                .iter()
                .map(|p| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    p + per_coord * z
                })
                .collect();
            let z: f64 = StandardNormal.sample(&mut rng);
            let side = (cfg.size_distribution.median_px * (cfg.size_distribution.log_std * z).exp())
                .round()
                .max(1.0);
            samples.push(Sample {
                id: format!("{}/{j:04}", class.name),
                class: class.name.clone(),
                features,
                min_side_px: side,
            });
        }
    }
    Ok(LabeledDataset { classes, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::proxy_distance;

    fn cohort_cfg(offset: f64, noise: f64) -> SyntheticDatasetConfig {
        SyntheticDatasetConfig {
            num_classes: 8,
            samples_per_class: 5,
            input_dim: 16,
            noise_scale: noise,
            num_confusable_cohorts: 2,
            cohort_size: 3,
            cohort_offset: offset,
            text_class_fraction: 0.5,
            size_distribution: SizeDistribution::default(),
            num_background_classes: 2,
            seed: 42,
        }
    }

    #[test]
    fn zero_noise_gives_identical_samples() {
        let ds = generate_synthetic(&cohort_cfg(0.3, 0.0)).unwrap();
        for c in &ds.classes {
            let vs: Vec<&Sample> = ds.samples.iter().filter(|s| s.class == c.name).collect();
            assert_eq!(vs.len(), 5);
            assert!(vs.iter().all(|s| s.features == vs[0].features));
        }
    }

    #[test]
    fn zero_offset_makes_cohorts_identical() {
        let ds = generate_synthetic(&cohort_cfg(0.0, 0.0)).unwrap();
        let cohorts = ds.cohorts();
        assert_eq!(cohorts.len(), 2);
        for cohort in cohorts {
            let first: Vec<&Vec<f64>> = cohort
                .iter()
                .map(|c| &ds.samples.iter().find(|s| &s.class == c).unwrap().features)
                .collect();
            for f in &first[1..] {
                assert!(proxy_distance(first[0], f).unwrap() < 1e-20);
            }
        }
    }

    #[test]
    fn small_offset_keeps_cohorts_close() {
        let ds = generate_synthetic(&cohort_cfg(0.2, 0.0)).unwrap();
        let cohort = &ds.cohorts()[0];
        let a = &ds.samples.iter().find(|s| s.class == cohort[0]).unwrap().features;
        let b = &ds.samples.iter().find(|s| s.class == cohort[1]).unwrap().features;
        let d = proxy_distance(a, b).unwrap();
        assert!(d > 0.0 && d < 0.2, "{d}");
    }

    #[test]
    fn deterministic_bytes() {
        let a = serde_json::to_vec(&generate_synthetic(&cohort_cfg(0.1, 0.2)).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_synthetic(&cohort_cfg(0.1, 0.2)).unwrap()).unwrap();
        assert_eq!(a, b);
        let mut other = cohort_cfg(0.1, 0.2);
        other.seed = 43;
        let c = serde_json::to_vec(&generate_synthetic(&other).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn names_and_metadata() {
        let ds = generate_synthetic(&cohort_cfg(0.1, 0.2)).unwrap();
        assert_eq!(ds.positive_classes().len(), 8);
        assert_eq!(ds.background_classes().len(), 2);
        assert_eq!(ds.classes.iter().filter(|c| c.has_text).count(), 4);
        for c in &ds.classes {
            assert_eq!(c.has_text, c.name.contains("_text"));
        }
        let names: Vec<&String> = ds.classes.iter().map(|c| &c.name).collect();
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                assert!(levenshtein(a, b) > 2, "{a} {b}");
            }
        }
        assert!(ds.samples.iter().all(|s| s.min_side_px >= 1.0));
        let manifest = ds.to_manifest();
        assert_eq!(manifest.len(), ds.samples.len());
        manifest.iter().for_each(|r| r.validate().unwrap());
    }

    #[test]
    fn holdout_split() {
        let ds = generate_synthetic(&cohort_cfg(0.1, 0.2)).unwrap();
        let (train, eval) = ds.holdout(2, 1);
        assert_eq!(eval.samples.len(), 10 * 2);
        assert_eq!(train.samples.len() + eval.samples.len(), ds.samples.len());
    }

    #[test]
    fn invalid_configs() {
        let mut c = cohort_cfg(0.1, 0.1);
        c.num_confusable_cohorts = 3;
        assert!(generate_synthetic(&c).is_err());
        c.num_confusable_cohorts = 0;
        c.num_classes = 0;
        assert!(generate_synthetic(&c).is_err());
    }
}
