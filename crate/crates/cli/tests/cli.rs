//! End-to-end tests driving the installed binary.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_docredact"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn synth(dir: &Path, templates: usize, docs: usize, seed: u64, out: &str, jobs: usize) {
    let out = run(
        &[
            "synth",
            "--templates",
            &templates.to_string(),
            "--docs-per-model",
            &docs.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            out,
            "--jobs",
            &jobs.to_string(),
        ],
        dir,
    );
    assert_success(&out);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--definitely-not-a-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["synth", "--templates", "0", "--docs-per-model", "1", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(1));

    // proposed without --store is a usage error.
    let out = run(
        &["redact", "--image", "missing.pnm", "--method", "proposed", "--out", "o.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["retrieve", "--store", "missing.jsonl", "--image", "missing.pnm"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(dir.path().join("broken.pnm"), b"P5\n4 4\n255\nxx").unwrap();
    let out = run(
        &["detect", "--image", "broken.pnm", "--out", "d.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    // Two featureless pages: alignment cannot find keypoints.
    let mut flat = Vec::from(&b"P5\n64 64\n255\n"[..]);
    flat.extend(vec![128u8; 64 * 64]);
    std::fs::write(dir.path().join("flat.pnm"), &flat).unwrap();
    let out = run(
        &["align", "--reference", "flat.pnm", "--target", "flat.pnm"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn full_workflow_and_reference_copy_identity() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 3, 11, "corpus", 2);
    assert_success(&run(
        &["index", "--corpus", "corpus", "--out", "store.jsonl"],
        dir.path(),
    ));

    // Retrieval of a stored image reports itself at similarity 1.
    let out = run(
        &["retrieve", "--store", "store.jsonl", "--image", "corpus/images/m00-d002.pnm"],
        dir.path(),
    );
    assert_success(&out);
    let line = String::from_utf8_lossy(&out.stdout);
    assert!(line.starts_with("m00-d002\tm00\t1.000000"), "{line}");

    // Copy-redacting the reference image against itself reproduces the
    // reference annotation (the store excludes the target's own doc_id,
    // so retrieval lands on another document of the same model).
    assert_success(&run(
        &[
            "redact",
            "--image",
            "corpus/images/m00-d000.pnm",
            "--store",
            "store.jsonl",
            "--corpus",
            "corpus",
            "--method",
            "copy",
            "--out",
            "copy.json",
        ],
        dir.path(),
    ));
    let reference: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("corpus/annotations/m00-d000.json")).unwrap(),
    )
    .unwrap();
    let copied: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("copy.json")).unwrap())
            .unwrap();
    let boxes = |v: &serde_json::Value| -> Vec<(f64, f64, f64, f64, String)> {
        v["boxes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| {
                (
                    b["x"].as_f64().unwrap(),
                    b["y"].as_f64().unwrap(),
                    b["w"].as_f64().unwrap(),
                    b["h"].as_f64().unwrap(),
                    b["class"].as_str().unwrap().to_string(),
                )
            })
            .collect()
    };
    assert_eq!(boxes(&reference), boxes(&copied));

    // The fused method runs end to end, writes an annotation, and renders.
    let out = run(
        &[
            "redact",
            "--image",
            "corpus/images/m00-d001.pnm",
            "--store",
            "store.jsonl",
            "--corpus",
            "corpus",
            "--method",
            "proposed",
            "--out",
            "proposed.json",
            "--render",
            "overlay.pnm",
            "--mode",
            "overlay",
        ],
        dir.path(),
    );
    assert_success(&out);
    assert!(dir.path().join("proposed.json").is_file());
    let rendered = std::fs::read(dir.path().join("overlay.pnm")).unwrap();
    assert!(rendered.starts_with(b"P6\n"));

    // Auto runs without store or corpus.
    assert_success(&run(
        &[
            "redact",
            "--image",
            "corpus/images/m00-d001.pnm",
            "--method",
            "auto",
            "--out",
            "auto.json",
        ],
        dir.path(),
    ));

    // Detect plus render from the written annotation.
    assert_success(&run(
        &["detect", "--image", "corpus/images/m00-d001.pnm", "--out", "det.json"],
        dir.path(),
    ));
    assert_success(&run(
        &[
            "render",
            "--image",
            "corpus/images/m00-d001.pnm",
            "--annotation",
            "det.json",
            "--mode",
            "blackout",
            "--out",
            "black.pnm",
        ],
        dir.path(),
    ));

    // Align two documents of the same model and check the output shape.
    let out = run(
        &[
            "align",
            "--reference",
            "corpus/images/m00-d000.pnm",
            "--target",
            "corpus/images/m00-d001.pnm",
        ],
        dir.path(),
    );
    assert_success(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.lines().last().unwrap().starts_with("inliers: "));
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_and_evaluate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 2, 4, 99, "a", 1);
    synth(dir.path(), 2, 4, 99, "b", 3);
    assert_eq!(read_tree(&dir.path().join("a")), read_tree(&dir.path().join("b")));

    for (report, table, jobs) in [("r1.json", "t1.txt", "1"), ("r2.json", "t2.txt", "2")] {
        assert_success(&run(
            &[
                "evaluate", "--corpus", "a", "--methods", "proposed,auto,copy", "--report", report,
                "--table", table, "--jobs", jobs,
            ],
            dir.path(),
        ));
    }
    assert_eq!(
        std::fs::read(dir.path().join("r1.json")).unwrap(),
        std::fs::read(dir.path().join("r2.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("t1.txt")).unwrap(),
        std::fs::read(dir.path().join("t2.txt")).unwrap()
    );
    let table = std::fs::read_to_string(dir.path().join("t1.txt")).unwrap();
    assert!(table.contains("Proposed Method"));
    assert!(table.contains("mHIoU"));

    // The fused method leads the overall mHIoU column.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r1.json")).unwrap())
            .unwrap();
    let mhiou = |name: &str| -> f64 {
        report["methods"]
            .as_array()
            .unwrap()
            .iter()
            .find(|m| m["method"] == name)
            .unwrap()["overall"]["mhiou"]
            .as_f64()
            .unwrap()
    };
    let proposed = mhiou("Proposed Method");
    assert!(proposed > mhiou("Copy Reference"));
    assert!(proposed > mhiou("Automatic Detection"));
}

#[test]
fn evaluate_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["evaluate", "--corpus", "x", "--methods", "proposed,magic", "--report", "r.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"policy": {"iou_gate": 2.0}}"#,
    )
    .unwrap();
    synth(dir.path(), 1, 2, 5, "corpus", 1);
    let out = run(
        &[
            "detect",
            "--image",
            "corpus/images/m00-d001.pnm",
            "--out",
            "d.json",
            "--config",
            "bad.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("policy.iou_gate"), "{err}");
}
