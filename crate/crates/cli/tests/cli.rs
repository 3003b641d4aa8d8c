//! End-to-end tests of the compiled binary: exit codes, the file contract
//! of each command, and byte-level determinism of a whole run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn flipaudit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flipaudit"))
        .args(args)
        .current_dir(dir)
        .env("FLIPAUDIT_THREADS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A small, fast config: synthetic inputs in `data/`, reports in `out/`.
fn small_config(dir: &Path, seed: u64) -> PathBuf {
    let text = format!(
        r#"
[inputs]
studies = "data/studies.csv"
outputs = "data/outputs.csv"
hierarchy = "data/hierarchy.json"

[run]
seed = {seed}
out_dir = "out"
tasks = ["Cardiomegaly"]

[backend]
kind = "logistic"

[identify]
n_splits = 2
n_resamples = 30
kinds = ["naive", "same_label"]

[flip]
n_resamples = 30
kinds = ["same_label"]

[synth]
n_studies = 200
n_models = 2
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Sorted (name, bytes) listing of a directory's files.
fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            assert!(
                e.file_type().unwrap().is_file(),
                "unexpected non-file {:?} in output directory",
                e.path()
            );
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn the_full_pipeline_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    small_config(dir, 7);

    // Same seed, two synth runs into different directories: identical.
    for data_dir in ["data", "data_again"] {
        let out = flipaudit(dir, &["synth", "--config", "run.toml", "--out", data_dir]);
        assert_eq!(exit_code(&out), 0, "synth failed: {}", stderr_of(&out));
    }
    assert_eq!(
        dir_contents(&dir.join("data")),
        dir_contents(&dir.join("data_again")),
        "synth is not deterministic"
    );
    let names: Vec<String> = dir_contents(&dir.join("data"))
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    assert_eq!(
        names,
        ["hierarchy.json", "outputs.csv", "studies.csv", "synth_recipe.json"]
    );

    // The analysis commands, twice, into separate report directories.
    for out_dir in ["out_a", "out_b"] {
        for command in ["audit", "identify", "flip", "report"] {
            let out = flipaudit(dir, &[command, "--config", "run.toml", "--out", out_dir]);
            assert_eq!(
                exit_code(&out),
                0,
                "{command} failed: {}",
                stderr_of(&out)
            );
        }
    }
    let a = dir_contents(&dir.join("out_a"));
    let b = dir_contents(&dir.join("out_b"));
    assert_eq!(a, b, "rerunning the pipeline changed some output bytes");
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "audit_aggregate.csv",
            "audit_report.csv",
            "audit_significance.csv",
            "flip_f1_change.csv",
            "flip_report.csv",
            "identifier_auroc_by_kind.csv",
            "identifier_report.csv",
            "identifier_summary.csv",
            "summary.md"
        ]
    );
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = flipaudit(dir.path(), &["synth", "--config", "nope.toml"]);
    assert_eq!(exit_code(&out), 2, "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("nope.toml"), "{}", stderr_of(&out));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[run]\nseeed = 1\n").unwrap();
    let out = flipaudit(dir.path(), &["synth", "--config", "run.toml"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("seeed"), "{}", stderr_of(&out));
}

#[test]
fn analysis_without_inputs_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "").unwrap();
    let out = flipaudit(dir.path(), &["audit", "--config", "run.toml"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("[inputs]"), "{}", stderr_of(&out));
}

#[test]
fn junk_threads_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_flipaudit"))
        .args(["synth", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("FLIPAUDIT_THREADS", "banana")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    assert!(
        stderr_of(&out).contains("FLIPAUDIT_THREADS"),
        "{}",
        stderr_of(&out)
    );
}

/// A dataset whose every label column is constant defeats threshold
/// fitting; the run must exit 1 (computation) and leave no report files.
#[test]
fn degenerate_dataset_exits_1_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let finding_columns = [
        "Atelectasis",
        "Cardiomegaly",
        "Pleural Effusion",
        "Consolidation",
        "Edema",
        "No Finding",
        "Enlarged Cardiomediastinum",
        "Lung Opacity",
        "Lung Lesion",
        "Pneumonia",
        "Pneumothorax",
        "Pleural Other",
        "Fracture",
        "Support Devices",
    ];
    let mut studies = format!(
        "study_id,age,sex,has_lateral_view,num_ap_views,num_pa_views,{}\n",
        finding_columns.join(",")
    );
    let mut outputs = String::from("study_id,model_id,task,score\n");
    for i in 0..8 {
        // Every study healthy: "No Finding" positive, all else zero.
        studies.push_str(&format!(
            "s{i},{},0,0,1,1,0,0,0,0,0,1,0,0,0,0,0,0,0,0\n",
            40 + i
        ));
        for task in [
            "Atelectasis",
            "Cardiomegaly",
            "Pleural Effusion",
            "Consolidation",
            "Edema",
        ] {
            outputs.push_str(&format!("s{i},m0,{task},0.{i}{i}\n"));
        }
    }
    fs::write(dir.join("studies.csv"), studies).unwrap();
    fs::write(dir.join("outputs.csv"), outputs).unwrap();
    fs::write(
        dir.join("run.toml"),
        r#"
[inputs]
studies = "studies.csv"
outputs = "outputs.csv"
"#,
    )
    .unwrap();

    let out = flipaudit(dir, &["audit", "--config", "run.toml", "--out", "reports"]);
    assert_eq!(exit_code(&out), 1, "{}", stderr_of(&out));
    let leftover = fs::read_dir(dir.join("reports"))
        .map(|entries| entries.count())
        .unwrap_or(0);
    assert_eq!(leftover, 0, "failed run left files behind");
}

#[test]
fn the_example_config_is_valid_and_generates_data() {
    let dir = tempfile::tempdir().unwrap();
    let example = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .join("config.example.toml");
    let out = flipaudit(
        dir.path(),
        &[
            "synth",
            "--config",
            example.to_str().unwrap(),
            "--out",
            "generated",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_of(&out));
    let studies = fs::read_to_string(dir.path().join("generated/studies.csv")).unwrap();
    // Header plus the example's 700 studies.
    assert_eq!(studies.lines().count(), 701);
}
