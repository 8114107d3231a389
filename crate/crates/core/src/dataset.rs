//! Manifest cleaning: class-name normalization, merging, deduplication,
//! size and instance filters, and class-disjoint splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_SIDE_PX: f64 = 10.0;
pub const DEFAULT_MIN_INSTANCES: usize = 20;
pub const DEFAULT_SMALL_CLASS_MIN: usize = 20;
pub const DEFAULT_FRACTIONS: SplitFractions = SplitFractions {
    train: 0.64,
    val: 0.16,
    test: 0.20,
};

/// One annotated logo region. `bbox` is `(x, y, w, h)` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image_id: String,
    pub source_dataset: String,
    pub class_name: String,
    pub bbox: [f64; 4],
    pub image_w: u32,
    pub image_h: u32,
    pub content_hash: String,
}

impl ManifestRecord {
    pub fn min_side(&self) -> f64 {
        self.bbox[2].min(self.bbox[3])
    }

    pub fn validate(&self) -> Result<()> {
        let [x, y, w, h] = self.bbox;
        let bad = |what: &str| Err(Error::Format(format!("record {}: {what}", self.image_id)));
        if !self.bbox.iter().all(|v| v.is_finite()) {
            return bad("non-finite bbox");
        }
        if self.image_w == 0 || self.image_h == 0 {
            return bad("image dimensions must be positive");
        }
        if x < 0.0 || y < 0.0 || w <= 0.0 || h <= 0.0 {
            return bad("bbox must have x, y >= 0 and w, h > 0");
        }
        if x + w > self.image_w as f64 || y + h > self.image_h as f64 {
            return bad("bbox exceeds image bounds");
        }
        if self.content_hash.is_empty() || !self.content_hash.chars().all(|c| c.is_ascii_hexdigit()) {
            return bad("content_hash must be a hex string");
        }
        Ok(())
    }
}

/// Lower-cases, maps `-` and space to `_`, drops apostrophes.
pub fn normalize_class_name(name: &str) -> Result<String> {
    let out: String = name
        .to_lowercase()
        .chars()
        .filter(|&c| c != '\'')
        .map(|c| if c == '-' || c == ' ' { '_' } else { c })
        .collect();
    if out.is_empty() {
        return Err(Error::EmptyName(name.to_string()));
    }
    Ok(out)
}

/// Old class name to canonical name. No canonical name may itself be a key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct MergeMap(BTreeMap<String, String>);

impl MergeMap {
    pub fn new(map: BTreeMap<String, String>) -> Result<Self> {
        for (from, to) in &map {
            if map.contains_key(to) {
                return Err(Error::InvalidConfig(format!(
                    "merge map is not acyclic: {from} -> {to} and {to} is also a key"
                )));
            }
        }
        Ok(Self(map))
    }

    pub fn empty() -> Self {
        Self(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for MergeMap {
    fn default() -> Self {
        let entries = [
            ("lv", "louisvuitton"),
            ("cocacola", "coca_cola"),
            ("northface", "the_north_face"),
        ];
        Self(entries.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }
}

impl TryFrom<BTreeMap<String, String>> for MergeMap {
    type Error = Error;
    fn try_from(m: BTreeMap<String, String>) -> Result<Self> {
        Self::new(m)
    }
}

impl From<MergeMap> for BTreeMap<String, String> {
    fn from(m: MergeMap) -> Self {
        m.0
    }
}

/// Single-step lookup; unmapped names pass through.
pub fn apply_merge_map(name: &str, merge_map: &MergeMap) -> String {
    merge_map.get(name).unwrap_or(name).to_string()
}

/// Keeps the first record per `(class, content_hash)` after a stable sort by
/// `(source_dataset, image_id)`. Identical crops in different classes stay.
pub fn dedup_within_class(records: &[ManifestRecord]) -> Vec<ManifestRecord> {
    let mut sorted: Vec<&ManifestRecord> = records.iter().collect();
    sorted.sort_by(|a, b| (&a.source_dataset, &a.image_id).cmp(&(&b.source_dataset, &b.image_id)));
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    sorted
        .into_iter()
        .filter(|r| seen.insert((&r.class_name, &r.content_hash)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterStats {
    pub dropped_small: usize,
    pub dropped_rare_class: usize,
    pub rare_classes: usize,
}

/// Drops records whose bbox min side is below `min_side_px`, then whole
/// classes left with fewer than `min_instances` records.
pub fn filter_records(
    records: &[ManifestRecord],
    min_side_px: f64,
    min_instances: usize,
) -> (Vec<ManifestRecord>, FilterStats) {
    let sized: Vec<&ManifestRecord> = records.iter().filter(|r| r.min_side() >= min_side_px).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &sized {
        *counts.entry(&r.class_name).or_default() += 1;
    }
    let kept: Vec<ManifestRecord> = sized
        .iter()
        .filter(|r| counts[r.class_name.as_str()] >= min_instances)
        .map(|r| (*r).clone())
        .collect();
    let stats = FilterStats {
        dropped_small: records.len() - sized.len(),
        dropped_rare_class: sized.len() - kept.len(),
        rare_classes: counts.values().filter(|&&c| c < min_instances).count(),
    };
    (kept, stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        DEFAULT_FRACTIONS
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidFractions(format!("{parts:?} must be non-negative")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidFractions(format!("{parts:?} sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Class-level assignment; serializes as `{class: "train"|"val"|"test"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitPlan(pub BTreeMap<String, Split>);

impl SplitPlan {
    pub fn get(&self, class: &str) -> Option<Split> {
        self.0.get(class).copied()
    }

    pub fn classes_in(&self, split: Split) -> Vec<String> {
        self.0.iter().filter(|(_, s)| **s == split).map(|(c, _)| c.clone()).collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for s in self.0.values() {
            out[*s as usize] += 1;
        }
        out
    }
}

// Guards against 0.16 * 100 landing just under 16.
const ROUND_EPS: f64 = 1e-9;

/// Classes with fewer than `small_class_min` samples go to train. The rest
/// are shuffled under `seed`; val and test take floor(fraction * n) classes
/// each and train keeps the remainder.
pub fn plan_open_set_split(
    records: &[ManifestRecord],
    fractions: &SplitFractions,
    small_class_min: usize,
    seed: u64,
) -> Result<SplitPlan> {
    fractions.validate()?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(&r.class_name).or_default() += 1;
    }
    let mut plan = BTreeMap::new();
    let mut eligible = Vec::new();
    for (class, n) in &counts {
        if *n < small_class_min {
            plan.insert(class.to_string(), Split::Train);
        } else {
            eligible.push(class.to_string());
        }
    }
    eligible.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = eligible.len() as f64;
    let n_val = (fractions.val * n + ROUND_EPS).floor() as usize;
    let n_test = (fractions.test * n + ROUND_EPS).floor() as usize;
    for (i, class) in eligible.into_iter().enumerate() {
        let split = if i < n_val {
            Split::Val
        } else if i < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
        plan.insert(class, split);
    }
    Ok(SplitPlan(plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub min_side_px: f64,
    pub min_instances: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            min_side_px: DEFAULT_MIN_SIDE_PX,
            min_instances: DEFAULT_MIN_INSTANCES,
        }
    }
}

/// Records removed by each cleaning step.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CleanReport {
    pub input: usize,
    pub renamed: usize,
    pub merged: usize,
    pub dropped_duplicates: usize,
    pub dropped_small: usize,
    pub dropped_rare_class: usize,
    pub rare_classes: usize,
    pub output: usize,
    pub output_classes: usize,
}

/// normalize, merge, dedup, filter. Invalid records are an error, not a drop.
pub fn clean_manifest(
    records: &[ManifestRecord],
    merge_map: &MergeMap,
    cfg: &CleanConfig,
) -> Result<(Vec<ManifestRecord>, CleanReport)> {
    let mut report = CleanReport {
        input: records.len(),
        ..CleanReport::default()
    };
    let mut renamed = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        let norm = normalize_class_name(&r.class_name)?;
        if norm != r.class_name {
            report.renamed += 1;
        }
        let merged = apply_merge_map(&norm, merge_map);
        if merged != norm {
            report.merged += 1;
        }
        renamed.push(ManifestRecord {
            class_name: merged,
            ..r.clone()
        });
    }
    let deduped = dedup_within_class(&renamed);
    report.dropped_duplicates = renamed.len() - deduped.len();
    let (kept, stats) = filter_records(&deduped, cfg.min_side_px, cfg.min_instances);
    report.dropped_small = stats.dropped_small;
    report.dropped_rare_class = stats.dropped_rare_class;
    report.rare_classes = stats.rare_classes;
    report.output = kept.len();
    report.output_classes = kept.iter().map(|r| r.class_name.as_str()).collect::<BTreeSet<_>>().len();
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, class: &str, w: f64, h: f64, hash: &str) -> ManifestRecord {
        ManifestRecord {
            image_id: id.into(),
            source_dataset: "fixture".into(),
            class_name: class.into(),
            bbox: [0.0, 0.0, w, h],
            image_w: w.ceil() as u32,
            image_h: h.ceil() as u32,
            content_hash: hash.into(),
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_class_name("Coca-Cola").unwrap(), "coca_cola");
        assert_eq!(normalize_class_name("Levi's Blue").unwrap(), "levis_blue");
        assert_eq!(normalize_class_name("adidas").unwrap(), "adidas");
        assert!(matches!(normalize_class_name("'"), Err(Error::EmptyName(_))));
    }

    #[test]
    fn merge_examples() {
        let m = MergeMap::default();
        assert_eq!(m.len(), 3);
        assert_eq!(apply_merge_map("lv", &m), "louisvuitton");
        assert_eq!(apply_merge_map("northface", &m), "the_north_face");
        assert_eq!(apply_merge_map("cocacola", &m), "coca_cola");
        assert_eq!(apply_merge_map("pepsi", &m), "pepsi");
    }

    #[test]
    fn cyclic_merge_map_rejected() {
        let m: BTreeMap<String, String> = [("a", "b"), ("b", "c")]
            .iter()
            .map(|(x, y)| (x.to_string(), y.to_string()))
            .collect();
        assert!(MergeMap::new(m).is_err());
        assert!(serde_json::from_str::<MergeMap>(r#"{"a":"b","b":"a"}"#).is_err());
    }

    #[test]
    fn dedup_rules() {
        let rs = vec![
            rec("2", "a", 20.0, 20.0, "ff"),
            rec("1", "a", 20.0, 20.0, "ff"),
            rec("3", "b", 20.0, 20.0, "ff"),
        ];
        let out = dedup_within_class(&rs);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].image_id, "1");
        assert_eq!(out[1].class_name, "b");
    }

    #[test]
    fn filter_boundaries() {
        let mut rs: Vec<ManifestRecord> = (0..20).map(|i| rec(&format!("k{i}"), "keep", 10.0, 10.0, "aa")).collect();
        rs.push(rec("small", "keep", 9.0, 200.0, "aa"));
        rs.extend((0..19).map(|i| rec(&format!("r{i}"), "rare", 50.0, 50.0, "aa")));
        let (kept, stats) = filter_records(&rs, 10.0, 20);
        assert_eq!(kept.len(), 20);
        assert!(kept.iter().all(|r| r.class_name == "keep"));
        assert_eq!(stats.dropped_small, 1);
        assert_eq!(stats.dropped_rare_class, 19);
    }

    #[test]
    fn size_filter_runs_before_instance_count() {
        // 20 records, one too small: the class falls to 19 and is dropped.
        let mut rs: Vec<ManifestRecord> = (0..19).map(|i| rec(&format!("k{i}"), "c", 30.0, 30.0, "aa")).collect();
        rs.push(rec("tiny", "c", 5.0, 30.0, "aa"));
        let (kept, _) = filter_records(&rs, 10.0, 20);
        assert!(kept.is_empty());
    }

    #[test]
    fn record_validation() {
        assert!(rec("a", "c", 10.0, 10.0, "0a").validate().is_ok());
        let mut r = rec("a", "c", 10.0, 10.0, "0a");
        r.bbox[0] = 1.0;
        assert!(r.validate().is_err());
        assert!(rec("a", "c", 10.0, 10.0, "xyz").validate().is_err());
    }

    #[test]
    fn split_counts() {
        let mut rs = Vec::new();
        for c in 0..100 {
            for i in 0..20 {
                rs.push(rec(&format!("{c}/{i}"), &format!("class{c:03}"), 20.0, 20.0, "aa"));
            }
        }
        for i in 0..19 {
            rs.push(rec(&format!("s/{i}"), "smallclass", 20.0, 20.0, "aa"));
        }
        let plan = plan_open_set_split(&rs, &SplitFractions::default(), 20, 7).unwrap();
        assert_eq!(plan.counts(), [65, 16, 20]);
        assert_eq!(plan.get("smallclass"), Some(Split::Train));
        assert_eq!(plan, plan_open_set_split(&rs, &SplitFractions::default(), 20, 7).unwrap());
        let bad = SplitFractions { train: 0.5, val: 0.1, test: 0.1 };
        assert!(matches!(plan_open_set_split(&rs, &bad, 20, 7), Err(Error::InvalidFractions(_))));
    }

    #[test]
    fn plan_json_shape() {
        let plan = SplitPlan([("a".to_string(), Split::Val)].into_iter().collect());
        assert_eq!(serde_json::to_string(&plan).unwrap(), r#"{"a":"val"}"#);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[A-Za-z' -]{1,20}") {
            if let Ok(once) = normalize_class_name(&s) {
                prop_assert_eq!(normalize_class_name(&once).unwrap(), once);
            }
        }

        #[test]
        fn dedup_counts_distinct_pairs(pairs in prop::collection::vec((0u8..4, 0u8..4), 0..60)) {
            let rs: Vec<ManifestRecord> = pairs
                .iter()
                .enumerate()
                .map(|(i, (c, h))| rec(&format!("{i:03}"), &format!("c{c}"), 20.0, 20.0, &format!("{h:02x}")))
                .collect();
            let distinct: HashSet<_> = pairs.iter().collect();
            prop_assert_eq!(dedup_within_class(&rs).len(), distinct.len());
        }

        #[test]
        fn filter_never_grows(sides in prop::collection::vec((1.0f64..40.0, 0u8..3), 0..80)) {
            let rs: Vec<ManifestRecord> = sides
                .iter()
                .enumerate()
                .map(|(i, (s, c))| rec(&i.to_string(), &format!("c{c}"), *s, 30.0, "aa"))
                .collect();
            let (kept, stats) = filter_records(&rs, 10.0, 5);
            prop_assert!(kept.len() <= rs.len());
            prop_assert_eq!(kept.len() + stats.dropped_small + stats.dropped_rare_class, rs.len());
        }

        #[test]
        fn split_assigns_every_class_once(sizes in prop::collection::vec(1usize..40, 1..40), seed in any::<u64>()) {
            let mut rs = Vec::new();
            for (c, n) in sizes.iter().enumerate() {
                for i in 0..*n {
                    rs.push(rec(&format!("{c}/{i}"), &format!("c{c}"), 20.0, 20.0, "aa"));
                }
            }
            let plan = plan_open_set_split(&rs, &SplitFractions::default(), 20, seed).unwrap();
            prop_assert_eq!(plan.0.len(), sizes.len());
            for (c, n) in sizes.iter().enumerate() {
                let s = plan.get(&format!("c{c}")).unwrap();
                if *n < 20 {
                    prop_assert_eq!(s, Split::Train);
                }
            }
        }
    }
}
