mod common;

use std::fs;

use critclust::ingest::{image_id_for, load_manifest, parse_manifest, scan_directory, subsample, Layout};
use critclust::{Digest, Error};
use proptest::prelude::*;

#[test]
fn class_subdirs_layout_labels_records() {
    let dir = tempfile::tempdir().unwrap();
    for (class, file) in [("a", "x.png"), ("b", "y.png")] {
        fs::create_dir_all(dir.path().join(class)).unwrap();
        fs::write(dir.path().join(class).join(file), class.as_bytes()).unwrap();
    }
    fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
    let m = scan_directory(dir.path(), Layout::ClassSubdirs).unwrap();
    assert_eq!(m.records.len(), 2);
    let labels: Vec<_> = m.records.iter().map(|r| r.truth_label.as_deref()).collect();
    assert_eq!(labels, [Some("a"), Some("b")]);
    assert_eq!(m.class_names, Some(vec!["a".into(), "b".into()]));
    let r = &m.records[0];
    assert_eq!(r.content_hash, Digest::of(b"a"));
    assert_eq!(r.image_id, format!("{}-x", &Digest::of(b"a").to_hex()[..16]));
    assert_eq!(image_id_for(&r.content_hash, &r.path), r.image_id);
}

#[test]
fn flat_layout_and_extensions() {
    let dir = tempfile::tempdir().unwrap();
    for f in ["1.PNG", "2.jpg", "3.jpeg", "4.bmp", "5.webp", "6.gif"] {
        fs::write(dir.path().join(f), f.as_bytes()).unwrap();
    }
    let m = scan_directory(dir.path(), Layout::Flat).unwrap();
    assert_eq!(m.records.len(), 5);
    assert!(m.records.iter().all(|r| r.truth_label.is_none()));
    let paths: Vec<_> = m.records.iter().map(|r| r.path.clone()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = scan_directory(dir.path(), Layout::Flat).unwrap_err();
    assert!(matches!(err, Error::ZeroImages(_)));
    assert!(err.to_string().contains("zero images found"));
    assert!(scan_directory(&dir.path().join("missing"), Layout::Flat).is_err());
}

#[test]
fn rescanning_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::write_images(dir.path(), 4);
    let b = scan_directory(dir.path(), Layout::ClassSubdirs).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::write_images(&dir.path().join("imgs"), 3);
    let path = dir.path().join("m.jsonl");
    m.save(&path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), m);
}

fn record_line(id: &str, label: Option<&str>) -> String {
    serde_json::json!({
        "image_id": id,
        "path": format!("/data/{id}.png"),
        "content_hash": Digest::of(id.as_bytes()).to_hex(),
        "truth_label": label,
        "attributes": null,
    })
    .to_string()
}

#[test]
fn manifest_parsing_rules() {
    let ok = [record_line("a", None), record_line("b", Some("x")), record_line("c", None)].join("\n");
    let m = parse_manifest(&ok, "m", "d").unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.dataset_id, "d");

    let dup = [record_line("a", None), record_line("a", None)].join("\n");
    match parse_manifest(&dup, "m", "d").unwrap_err() {
        Error::DuplicateImageId { image_id, line } => assert_eq!((image_id.as_str(), line), ("a", 2)),
        e => panic!("unexpected {e}"),
    }

    let bad_class = format!(
        "{}\n{}",
        serde_json::json!({"dataset_id": "d", "class_names": ["cat"]}),
        record_line("a", Some("dog"))
    );
    assert!(matches!(parse_manifest(&bad_class, "m", "d"), Err(Error::UnknownClass { line: 2, .. })));

    let malformed = format!("{}\n\n{{not json\n", record_line("a", None));
    match parse_manifest(&malformed, "m.jsonl", "d").unwrap_err() {
        Error::Parse { line, path, .. } => assert_eq!((line, path.as_str()), (3, "m.jsonl")),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn record_field_order_is_fixed() {
    let m = parse_manifest(&record_line("a", Some("x")), "m", "d").unwrap();
    let bytes = String::from_utf8(m.to_bytes()).unwrap();
    let line = bytes.lines().nth(1).unwrap();
    let pos: Vec<usize> = ["image_id", "path", "content_hash", "truth_label", "attributes"]
        .iter()
        .map(|k| line.find(&format!("\"{k}\"")).unwrap())
        .collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
}

/// Independent SplitMix64 plus partial Fisher-Yates, written from the
/// algorithm description rather than the crate's code.
fn reference_sample(len: usize, n: usize, seed: u64) -> Vec<usize> {
    const GAMMA: u64 = 0x9E3779B97F4A7C15;
    let mut counter = seed;
    let mut draw = || {
        counter = counter.wrapping_add(GAMMA);
        let mut z = counter;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let mut pool: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let bound = (len - i) as u64;
        let threshold = (u64::MAX - bound + 1) % bound;
        let r = loop {
            let x = draw();
            if x >= threshold {
                break x % bound;
            }
        };
        pool.swap(i, i + r as usize);
    }
    let mut out = pool[..n].to_vec();
    out.sort();
    out
}

#[test]
fn splitmix_known_outputs() {
    // First outputs for seed 0, as published with the generator.
    let mut g = critclust::ingest::SplitMix64::new(0);
    assert_eq!(g.next_u64(), 0xE220A8397B1DCDAF);
    assert_eq!(g.next_u64(), 0x6E789E6AA1B965F4);
}

#[test]
fn subsample_matches_reference_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::write_images(dir.path(), 2);
    let five = critclust::ingest::DatasetManifest {
        records: m.records[..5].to_vec(),
        ..m.clone()
    };
    for seed in [0u64, 1, 42, 0xDEADBEEF] {
        let s = subsample(&five, 2, seed).unwrap();
        let want: Vec<_> = reference_sample(5, 2, seed).into_iter().map(|i| five.records[i].image_id.clone()).collect();
        let got: Vec<_> = s.records.iter().map(|r| r.image_id.clone()).collect();
        assert_eq!(got, want, "seed {seed}");
    }
    assert_eq!(subsample(&m, m.records.len(), 9).unwrap().records, m.records);
    assert!(matches!(subsample(&m, 7, 1), Err(Error::SampleTooLarge { requested: 7, available: 6 })));
    assert!(subsample(&m, 0, 1).is_err());
}

#[test]
fn subsample_large_is_reproducible() {
    let ids: Vec<String> = (0..9532).map(|i| record_line(&format!("img{i:05}"), None)).collect();
    let m = parse_manifest(&ids.join("\n"), "m", "stanford40").unwrap();
    let a = subsample(&m, 1000, 2024).unwrap();
    let b = subsample(&m, 1000, 2024).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records.len(), 1000);
    let want = reference_sample(9532, 1000, 2024);
    let got: Vec<usize> = a.records.iter().map(|r| r.image_id[3..].parse().unwrap()).collect();
    assert_eq!(got, want);
}

proptest! {
    #[test]
    fn subsample_is_ordered_subset(len in 1usize..60, frac in 0.0f64..1.0, seed: u64) {
        let n = ((len as f64 * frac) as usize).max(1);
        let chosen = critclust::ingest::sample_indices(len, n, seed);
        prop_assert_eq!(chosen.len(), n);
        prop_assert!(chosen.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(chosen.iter().all(|&i| i < len));
        prop_assert_eq!(chosen, reference_sample(len, n, seed));
    }

    #[test]
    fn manifest_text_round_trip(labels in prop::collection::vec(prop::option::of("[a-z]{1,6}"), 1..12)) {
        let lines: Vec<String> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| record_line(&format!("id{i}"), l.as_deref()))
            .collect();
        let m = parse_manifest(&lines.join("\n"), "m", "d").unwrap();
        let again = parse_manifest(std::str::from_utf8(&m.to_bytes()).unwrap(), "m", "other").unwrap();
        prop_assert_eq!(again, m);
    }
}
