mod common;

use std::collections::BTreeMap;
use std::fs;

use critclust::evaluation::{evaluate_run, fairness_audit, LabelSource, MappingMode, DEFAULT_FLAG_THRESHOLD};
use critclust::ingest::DatasetManifest;
use critclust::pipeline::{Pipeline, PipelineConfig, RunOptions, RunStore, Stage};
use critclust::Error;
use tempfile::TempDir;

fn finished(per_class: usize, tweak: impl FnOnce(&mut DatasetManifest)) -> (TempDir, RunStore, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = common::write_images(&dir.path().join("imgs"), per_class);
    tweak(&mut manifest);
    let store = RunStore::open(dir.path().join("store")).unwrap();
    let gw = common::gateway(common::perfect_backend(), Some(&store), false);
    Pipeline::new(&store, &gw)
        .run_all(&manifest, &common::criterion(), &PipelineConfig::default(), None)
        .unwrap();
    (dir, store, manifest)
}

#[test]
fn perfect_run_scores_one() {
    let (_dir, store, _) = finished(20, |_| {});
    let r = evaluate_run(&store, "run-0001", &LabelSource::Manifest, MappingMode::Injective).unwrap();
    assert_eq!((r.acc, r.nmi, r.ari, r.n_evaluated), (1.0, 1.0, 1.0, 60));
    assert_eq!(r.clusters, ["cat", "dog", "bird"]);
    assert_eq!(r.classes, common::CLASSES);
    assert_eq!(r.confusion, vec![vec![0, 20, 0], vec![0, 0, 20], vec![20, 0, 0]]);

    let eval = store.run_dir("run-0001").join("eval");
    let saved: critclust::EvalReport = serde_json::from_slice(&fs::read(eval.join("eval.json")).unwrap()).unwrap();
    assert_eq!(saved, r);
    assert_eq!(fs::read_to_string(eval.join("confusion.tsv")).unwrap(), r.confusion_tsv());
    let m = store.summary("run-0001").unwrap().metrics.unwrap();
    assert_eq!((m.acc, m.n_evaluated), (1.0, 60));

    let m2o = evaluate_run(&store, "run-0001", &LabelSource::Manifest, MappingMode::ManyToOne).unwrap();
    assert_eq!(m2o.acc, 1.0);
}

#[test]
fn human_labels_score_only_their_subset() {
    let (dir, store, manifest) = finished(30, |_| {});
    let path = dir.path().join("human.jsonl");
    // Every third image, labelled with its species under a coarser scheme.
    let lines: Vec<String> = manifest
        .records
        .iter()
        .step_by(3)
        .map(|r| {
            let label = if r.truth_label.as_deref() == Some("bird") { "flies" } else { "walks" };
            serde_json::json!({"image_id": r.image_id, "human_label": label}).to_string()
        })
        .collect();
    fs::write(&path, lines.join("\n")).unwrap();
    let r = evaluate_run(&store, "run-0001", &LabelSource::HumanFile(path.clone()), MappingMode::Injective).unwrap();
    assert_eq!(r.n_evaluated, 30);
    assert_eq!(r.classes, ["flies", "walks"]);
    // Injective: one of cat/dog stays unmatched.
    assert_eq!(r.acc, 20.0 / 30.0);
    let m2o = evaluate_run(&store, "run-0001", &LabelSource::HumanFile(path.clone()), MappingMode::ManyToOne).unwrap();
    assert_eq!(m2o.acc, 1.0);

    let mut stray = lines.clone();
    stray.push(serde_json::json!({"image_id": "nope", "human_label": "walks"}).to_string());
    fs::write(&path, stray.join("\n")).unwrap();
    assert!(matches!(
        evaluate_run(&store, "run-0001", &LabelSource::HumanFile(path.clone()), MappingMode::Injective),
        Err(Error::UnknownImageId(id)) if id == "nope"
    ));

    let mut dup = lines.clone();
    dup.push(lines[0].clone());
    fs::write(&path, dup.join("\n")).unwrap();
    assert!(matches!(
        evaluate_run(&store, "run-0001", &LabelSource::HumanFile(path.clone()), MappingMode::Injective),
        Err(Error::DuplicateImageId { .. })
    ));

    fs::write(&path, "").unwrap();
    assert!(matches!(
        evaluate_run(&store, "run-0001", &LabelSource::HumanFile(path), MappingMode::Injective),
        Err(Error::NoLabeledImages)
    ));
}

#[test]
fn unlabeled_manifest_has_nothing_to_score() {
    let (_dir, store, _) = finished(2, |m| {
        for r in &mut m.records {
            r.truth_label = None;
        }
        m.class_names = None;
    });
    assert!(matches!(
        evaluate_run(&store, "run-0001", &LabelSource::Manifest, MappingMode::Injective),
        Err(Error::NoLabeledImages)
    ));
}

#[test]
fn unfinished_runs_cannot_be_scored() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = common::write_images(&dir.path().join("imgs"), 2);
    let store = RunStore::open(dir.path().join("store")).unwrap();
    let gw = common::gateway(common::perfect_backend(), Some(&store), false);
    Pipeline::new(&store, &gw)
        .with_options(RunOptions { stop_after: Some(Stage::Step2b) })
        .run_all(&manifest, &common::criterion(), &PipelineConfig::default(), None)
        .unwrap();
    assert!(evaluate_run(&store, "run-0001", &LabelSource::Manifest, MappingMode::Injective).is_err());
    assert!(fairness_audit(&store, "run-0001", "gender", DEFAULT_FLAG_THRESHOLD).is_err());
    assert!(matches!(
        evaluate_run(&store, "run-0404", &LabelSource::Manifest, MappingMode::Injective),
        Err(Error::RunNotFound(_))
    ));
}

/// Cats: 12 female, 8 male. Dogs: 10 and 10. Birds carry no attribute.
fn with_gender(m: &mut DatasetManifest) {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for r in &mut m.records {
        let class = r.truth_label.clone().unwrap();
        let i = seen.entry(class.clone()).or_default();
        let group = match class.as_str() {
            "cat" if *i < 12 => Some("female"),
            "cat" => Some("male"),
            "dog" if *i < 10 => Some("female"),
            "dog" => Some("male"),
            _ => None,
        };
        *i += 1;
        r.attributes = group.map(|g| BTreeMap::from([("gender".to_string(), g.to_string())]));
    }
}

#[test]
fn fairness_audit_flags_the_skewed_cluster() {
    let (_dir, store, _) = finished(20, with_gender);
    let r = fairness_audit(&store, "run-0001", "gender", DEFAULT_FLAG_THRESHOLD).unwrap();
    assert_eq!(r.groups, ["female", "male"]);
    assert_eq!((r.n_included, r.n_missing), (40, 20));

    let cat = r.cluster("cat").unwrap();
    assert_eq!((cat.counts["female"], cat.counts["male"]), (12, 8));
    assert!((cat.disparity - 0.2).abs() < 1e-12);
    assert!(cat.flagged);
    let dog = r.cluster("dog").unwrap();
    assert_eq!(dog.disparity, 0.0);
    assert!(!dog.flagged);
    let bird = r.cluster("bird").unwrap();
    assert_eq!((bird.total, bird.disparity, bird.flagged), (0, 0.0, false));
    for c in [cat, dog] {
        assert!((c.ratios.values().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    assert_eq!(r.flagged().count(), 1);

    let saved = store.run_dir("run-0001").join("eval").join("fairness-gender.json");
    let back: critclust::FairnessReport = serde_json::from_slice(&fs::read(saved).unwrap()).unwrap();
    assert_eq!(back, r);

    // Raising the threshold past the disparity clears the flag.
    let lenient = fairness_audit(&store, "run-0001", "gender", 0.25).unwrap();
    assert_eq!(lenient.flagged().count(), 0);

    assert!(matches!(
        fairness_audit(&store, "run-0001", "age", DEFAULT_FLAG_THRESHOLD),
        Err(Error::AttributeAbsent(a)) if a == "age"
    ));
    let odd = fairness_audit(&store, "run-0001", "skin/tone", DEFAULT_FLAG_THRESHOLD);
    assert!(odd.is_err());
}
