use proxyforge::dataset::{clean_manifest, plan_open_set_split, CleanConfig, MergeMap, Split, SplitFractions};
use proxyforge::io::{config_hash, read_jsonl, write_jsonl, EmbeddingRecord};
use proxyforge::training::{generate_synthetic, LabeledDataset, SyntheticDatasetConfig};

#[test]
fn synthetic_generation_is_byte_identical() {
    let cfg = SyntheticDatasetConfig::confusable(12);
    let a = serde_json::to_vec(&generate_synthetic(&cfg).unwrap().to_records()).unwrap();
    let b = serde_json::to_vec(&generate_synthetic(&cfg).unwrap().to_records()).unwrap();
    assert_eq!(a, b);
    let other = serde_json::to_vec(&generate_synthetic(&SyntheticDatasetConfig::confusable(13)).unwrap().to_records()).unwrap();
    assert_ne!(a, other);
}

#[test]
fn features_survive_jsonl() {
    let ds = generate_synthetic(&SyntheticDatasetConfig::with_background(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.jsonl");
    write_jsonl(&path, &ds.to_records()).unwrap();
    let records: Vec<EmbeddingRecord> = read_jsonl(&path).unwrap();
    let back = LabeledDataset::from_records(records, &ds.background_classes());
    assert_eq!(back.samples.len(), ds.samples.len());
    for (a, b) in back.samples.iter().zip(&ds.samples) {
        assert_eq!(a, b, "sample {} differs", b.id);
    }
    let mut expected = ds.background_classes();
    expected.sort();
    assert_eq!(back.background_classes(), expected);
}

#[test]
fn clean_then_split_is_deterministic() {
    let ds = generate_synthetic(&SyntheticDatasetConfig {
        num_classes: 30,
        samples_per_class: 25,
        ..SyntheticDatasetConfig::separable(2)
    })
    .unwrap();
    let mut manifest = ds.to_manifest();
    // Uppercase a few names and duplicate a record so every rule has work.
    for r in manifest.iter_mut().step_by(7) {
        r.class_name = r.class_name.to_uppercase();
    }
    let dup = manifest[0].clone();
    manifest.push(dup);
    let run = || {
        let (clean, report) = clean_manifest(&manifest, &MergeMap::default(), &CleanConfig::default()).unwrap();
        let plan = plan_open_set_split(&clean, &SplitFractions::default(), 20, 5).unwrap();
        (clean, report, plan)
    };
    let (clean, report, plan) = run();
    assert_eq!(run(), (clean.clone(), report.clone(), plan.clone()));
    assert_eq!(report.dropped_duplicates, 1);
    assert!(report.renamed > 0);
    assert!(clean.iter().all(|r| r.class_name == r.class_name.to_lowercase()));
    for class in plan.classes_in(Split::Val).iter().chain(&plan.classes_in(Split::Test)) {
        assert!(clean.iter().filter(|r| &r.class_name == class).count() >= 20);
    }
}

#[test]
fn config_hash_ignores_key_order() {
    let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": {"y": 2, "x": 3}}"#).unwrap();
    let b: serde_json::Value = serde_json::from_str(r#"{"a": {"x": 3, "y": 2}, "b": 1}"#).unwrap();
    assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    let c: serde_json::Value = serde_json::from_str(r#"{"a": {"x": 3, "y": 2}, "b": 2}"#).unwrap();
    assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
}
