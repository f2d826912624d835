//! End-to-end CLI behavior: stage ordering, manifests, tokenize, exit codes.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repo_demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo/config.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(common::bin()).args(args).output().unwrap()
}

fn run_stage(stage: &str, config: &Path, workdir: &Path) -> Output {
    run(&[
        stage,
        "--config",
        config.to_str().unwrap(),
        "--workdir",
        workdir.to_str().unwrap(),
        "--workers",
        "2",
    ])
}

#[test]
fn run_all_on_the_bundled_demo_produces_vocab_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let workdir = dir.path().join("wd");
    let config = repo_demo_config();
    let out = run_stage("run-all", &config, &workdir);
    assert!(
        out.status.success(),
        "run-all failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for rel in [
        "final.vocab.tsv",
        "final.vocab.tsv.provenance.json",
        "merge.meta.json",
        "reports/fertility.csv",
        "reports/coverage.csv",
        "reports/overlap.csv",
        "reports/summary.json",
        "manifest.json",
    ] {
        assert!(workdir.join(rel).is_file(), "missing {rel}");
    }
    // The merged size identity is visible in the merge metadata.
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(workdir.join("merge.meta.json")).unwrap())
            .unwrap();
    let final_size = meta["final_size"].as_u64().unwrap();
    let overlap = meta["overlap_count"].as_u64().unwrap();
    let sources: u64 = meta["source_sizes"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(final_size, sources - overlap);

    // Re-running a stage with unchanged inputs is a recorded no-op with
    // byte-identical outputs.
    let before = fs::read(workdir.join("final.vocab.tsv")).unwrap();
    let out = run_stage("merge", &config, &workdir);
    assert!(out.status.success());
    let after = fs::read(workdir.join("final.vocab.tsv")).unwrap();
    assert_eq!(before, after);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(workdir.join("manifest.json")).unwrap()).unwrap();
    let records = manifest["records"].as_array().unwrap();
    let last = records.last().unwrap();
    assert_eq!(last["stage"], "merge");
    assert_eq!(last["noop"], true);

    // Every stage record hashes all of its outputs.
    for record in records {
        assert!(!record["outputs"].as_object().unwrap().is_empty());
        assert!(record["config_hash"].as_str().unwrap().len() == 64);
    }
}

#[test]
fn stages_out_of_order_fail_with_exit_3_naming_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::small_three_language_setup(dir.path(), 3);
    let workdir = dir.path().join("wd");
    let out = run_stage("merge", &config, &workdir);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("clusters.tsv") && stderr.contains("cluster"),
        "stderr should name the missing artifact and its stage: {stderr}"
    );
}

#[test]
fn tampered_intermediates_are_detected_before_the_next_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::small_three_language_setup(dir.path(), 5);
    let workdir = dir.path().join("wd");
    assert!(run_stage("sample", &config, &workdir).status.success());
    // Corrupt a sampled corpus behind the manifest's back.
    let victim = workdir.join("sampled/lat.txt");
    let mut text = fs::read_to_string(&victim).unwrap();
    text.push_str("injected line\n");
    fs::write(&victim, text).unwrap();
    let out = run_stage("train-langs", &config, &workdir);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sampled/lat.txt"), "stderr: {stderr}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, "{\"languages\": []}").unwrap();
    let out = run_stage("sample", &config, dir.path());
    assert_eq!(out.status.code(), Some(2));

    // k larger than the language count is a config error too.
    let good = common::small_three_language_setup(dir.path(), 1);
    let mut value: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&good).unwrap()).unwrap();
    value["k"] = serde_json::json!(12);
    fs::write(&good, serde_json::to_string(&value).unwrap()).unwrap();
    let out = run_stage("sample", &good, dir.path());
    assert_eq!(out.status.code(), Some(2));
}

fn toy_vocab_file(dir: &Path) -> PathBuf {
    let path = dir.join("toy.vocab.tsv");
    fs::write(
        &path,
        "#ulm-vocab v1\n<unk>\t-9.0\nab\t-1.0\na\t-2.0\nb\t-2.5\n\u{2581}\t-1.5\n",
    )
    .unwrap();
    path
}

#[test]
fn tokenize_prefers_the_whole_token() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = toy_vocab_file(dir.path());
    let out = run(&[
        "tokenize",
        "--vocab",
        vocab.to_str().unwrap(),
        "--delimiter",
        "|",
        "ab",
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "\u{2581}|ab\n");
}

#[test]
fn tokenize_empty_input_is_empty_success() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = toy_vocab_file(dir.path());
    let input = dir.path().join("empty.txt");
    fs::write(&input, "").unwrap();
    let out = run(&[
        "tokenize",
        "--vocab",
        vocab.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn tokenize_surfaces_the_unk_marker() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = toy_vocab_file(dir.path());
    let out = run(&["tokenize", "--vocab", vocab.to_str().unwrap(), "axb"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("<unk>"), "stdout: {stdout}");
}

#[test]
fn tokenize_rejects_unreadable_vocab() {
    let out = run(&["tokenize", "--vocab", "/nonexistent.vocab.tsv", "ab"]);
    assert_eq!(out.status.code(), Some(4));
}
