mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::Fixture;
use serde_json::Value;

fn critclust(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critclust"))
        .arg("--store")
        .arg(store)
        .args(args)
        .env_remove("CRITCLUST_STORE")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_str(&ok(out)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scans the fixture images and runs the mock pipeline once.
fn scanned_and_run(fx: &Fixture) -> String {
    let manifest = fx.dir.join("manifest.jsonl");
    ok(&critclust(&fx.store, &["scan", "--images", s(&fx.images), "--dataset-id", "animals", "--out", s(&manifest)]));
    let m = manifest.to_str().unwrap().to_string();
    ok(&critclust(
        &fx.store,
        &["run", "--manifest", &m, "--criterion", s(&fx.criterion), "--backend", &fx.backend_arg()],
    ));
    m
}

#[test]
fn scan_run_show_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 5);
    let manifest = dir.path().join("manifest.jsonl");
    let scan = json(&critclust(
        &fx.store,
        &["--format", "structured", "scan", "--images", s(&fx.images), "--dataset-id", "animals", "--out", s(&manifest)],
    ));
    assert_eq!(scan["images"], 15);
    assert_eq!(scan["classes"], serde_json::json!(["bird", "cat", "dog"]));

    let run = json(&critclust(
        &fx.store,
        &[
            "--format",
            "structured",
            "run",
            "--manifest",
            s(&manifest),
            "--criterion",
            s(&fx.criterion),
            "--backend",
            &fx.backend_arg(),
        ],
    ));
    assert_eq!(run["run_id"], "run-0001");
    assert_eq!(run["stage"], "done");
    let sizes: Vec<(String, u64)> = run["clusters"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["name"].as_str().unwrap().to_string(), c["size"].as_u64().unwrap()))
        .collect();
    assert_eq!(sizes, [("cat".into(), 5), ("dog".into(), 5), ("bird".into(), 5)]);

    let text = ok(&critclust(&fx.store, &["show", "--run", "run-0001"]));
    assert!(text.contains("run run-0001"));
    assert!(text.contains("stage done"));
    assert!(text.contains("fallback rate 0.0000"));

    let eval = ok(&critclust(&fx.store, &["eval", "--run", "run-0001"]));
    assert!(eval.contains("ACC 1.0000"), "{eval}");
    let eval = json(&critclust(&fx.store, &["--format", "structured", "eval", "--run", "run-0001", "--many-to-one"]));
    assert_eq!(eval["mapping_mode"], "many_to_one");
    assert_eq!(eval["n_evaluated"], 15);

    ok(&critclust(&fx.store, &["confusion-plot", "--run", "run-0001"]));
    let svg = fs::read_to_string(fx.store.join("runs/run-0001/eval/confusion.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<rect x=").count(), 9);

    let list = ok(&critclust(&fx.store, &["list"]));
    assert!(list.starts_with("run-0001"));
}

#[test]
fn eval_without_labels_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 2);
    let flat = dir.path().join("flat");
    fs::create_dir_all(&flat).unwrap();
    for e in fs::read_dir(fx.images.join("cat")).unwrap() {
        let p = e.unwrap().path();
        fs::copy(&p, flat.join(p.file_name().unwrap())).unwrap();
    }
    let manifest = dir.path().join("flat.jsonl");
    ok(&critclust(&fx.store, &["scan", "--images", s(&flat), "--layout", "flat", "--out", s(&manifest)]));
    let script = dir.path().join("two.json");
    let mut sc = common::perfect_script();
    sc.rules.retain(|r| !r.prompt_contains.iter().any(|p| p == "STEP2B"));
    sc.rules.push(critclust::gateway::Rule::llm(&["STEP2B"], "1: cat\n2: dog"));
    fs::write(&script, serde_json::to_vec(&sc).unwrap()).unwrap();
    let crit = dir.path().join("k2.toml");
    let tc = critclust::prompts::TextCriterion { k: 2, ..common::criterion() };
    fs::write(&crit, tc.to_toml_string()).unwrap();
    ok(&critclust(
        &fx.store,
        &["run", "--manifest", s(&manifest), "--criterion", s(&crit), "--backend", &format!("mock:{}", s(&script))],
    ));

    let out = critclust(&fx.store, &["eval", "--run", "run-0001"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no labeled images"));

    let out = critclust(&fx.store, &["--format", "structured", "eval", "--run", "run-0001"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["error"]["kind"], "no_labeled_images");
}

#[test]
fn refine_records_parent() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 3);
    scanned_and_run(&fx);
    let edited = dir.path().join("edited.toml");
    fs::write(&edited, common::edited_criterion().to_toml_string()).unwrap();
    let text = ok(&critclust(
        &fx.store,
        &["refine", "--parent", "run-0001", "--criterion", s(&edited), "--backend", &fx.backend_arg()],
    ));
    assert!(text.contains("run run-0002"));
    let show = ok(&critclust(&fx.store, &["show", "--run", "run-0002"]));
    assert!(show.contains("parent run-0001"), "{show}");
    assert!(show.contains("criterion animals-v2"));

    let out = critclust(&fx.store, &["refine", "--parent", "run-0404", "--criterion", s(&edited), "--backend", &fx.backend_arg()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("run-0404"));
}

#[test]
fn record_then_replay_offline() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 3);
    let manifest = dir.path().join("manifest.jsonl");
    ok(&critclust(&fx.store, &["scan", "--images", s(&fx.images), "--out", s(&manifest)]));
    let transcript = dir.path().join("t.jsonl");
    let rec = json(&critclust(
        &fx.store,
        &[
            "--format",
            "structured",
            "transcript",
            "record",
            "--manifest",
            s(&manifest),
            "--criterion",
            s(&fx.criterion),
            "--backend",
            &fx.backend_arg(),
            "--out",
            s(&transcript),
        ],
    ));
    // Unique requests only: 9 images, but every class shares one
    // description, so 3 label prompts, 1 cluster list and 3 assignments.
    assert_eq!(rec["transcript"]["entries"], 9 + 3 + 1 + 3);

    let other = dir.path().join("store2");
    let args = [
        "transcript",
        "replay",
        "--manifest",
        s(&manifest),
        "--criterion",
        s(&fx.criterion),
        "--transcript",
        s(&transcript),
    ];
    ok(&critclust(&other, &args));
    let a = fs::read(fx.store.join("runs/run-0001/assignments.jsonl")).unwrap();
    let b = fs::read(other.join("runs/run-0001/assignments.jsonl")).unwrap();
    assert_eq!(a, b);

    // An edited criterion asks questions the transcript cannot answer.
    let edited = dir.path().join("edited.toml");
    fs::write(&edited, common::edited_criterion().to_toml_string()).unwrap();
    let out = critclust(
        &other,
        &[
            "--format",
            "structured",
            "transcript",
            "replay",
            "--manifest",
            s(&manifest),
            "--criterion",
            s(&edited),
            "--transcript",
            s(&transcript),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("no transcript entry"), "{text}");
}

#[test]
fn stop_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 2);
    let manifest = dir.path().join("manifest.jsonl");
    ok(&critclust(&fx.store, &["scan", "--images", s(&fx.images), "--out", s(&manifest)]));
    let text = ok(&critclust(
        &fx.store,
        &[
            "run",
            "--manifest",
            s(&manifest),
            "--criterion",
            s(&fx.criterion),
            "--backend",
            &fx.backend_arg(),
            "--stop-after",
            "step2a",
        ],
    ));
    assert!(text.contains("stage step2b"), "{text}");
    let done = json(&critclust(
        &fx.store,
        &["--format", "structured", "resume", "--run", "run-0001", "--backend", &fx.backend_arg()],
    ));
    assert_eq!(done["stage"], "done");

    let edited = dir.path().join("edited.toml");
    fs::write(&edited, common::edited_criterion().to_toml_string()).unwrap();
    let out = critclust(
        &fx.store,
        &["resume", "--run", "run-0001", "--backend", &fx.backend_arg(), "--criterion", s(&edited)],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refine"));
}

#[test]
fn subsample_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(dir.path(), 10);
    let manifest = dir.path().join("manifest.jsonl");
    ok(&critclust(&fx.store, &["scan", "--images", s(&fx.images), "--out", s(&manifest)]));
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        ok(&critclust(&fx.store, &["subsample", "--manifest", s(&manifest), "--n", "7", "--seed", "42", "--out", s(out)]));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let m = critclust::ingest::load_manifest(&a).unwrap();
    assert_eq!(m.records.len(), 7);

    let out = critclust(&fx.store, &["subsample", "--manifest", s(&manifest), "--n", "99", "--out", s(&a)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let out = critclust(&store, &["run", "--manifest", "m.jsonl", "--preset", "x", "--backend", "carrier-pigeon"]);
    assert_eq!(out.status.code(), Some(2));
    let out = critclust(&store, &["run", "--manifest", "m.jsonl", "--backend", "mock:x.json"]);
    assert_eq!(out.status.code(), Some(2), "a criterion or preset is required");
    let out = critclust(&store, &["show", "--run", "run-0001"]);
    assert_eq!(out.status.code(), Some(1));
    let out = critclust(&store, &["--format", "structured", "show", "--run", "run-0001"]);
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["error"]["kind"], "run_not_found");
}
