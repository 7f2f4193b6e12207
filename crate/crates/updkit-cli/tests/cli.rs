//! End-to-end CLI tests: exit codes and primary subcommand behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../updkit/fixtures")
}

fn updkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_updkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("updkit_cli_{}_{name}", std::process::id()))
}

#[test]
fn kb_validate_accepts_the_fixture() {
    let kb = fixtures().join("kb_fuel.json");
    let out = updkit(&["kb", "validate", kb.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("11 units"), "got: {stdout}");
}

#[test]
fn kb_validate_rejects_broken_input() {
    let path = temp_path("bad_kb.json");
    std::fs::write(&path, "{\"format_version\": \"1\"}").unwrap();
    let out = updkit(&["kb", "validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let _ = std::fs::remove_file(&path);
}

#[test]
fn graph_check_passes_the_fixture_and_fails_a_bad_edge() {
    let kb = fixtures().join("bench/kb.json");
    let graph = fixtures().join("bench/graphs/fuel.json");
    let out = updkit(&[
        "graph", "check",
        "--kb", kb.to_str().unwrap(),
        "--graph", graph.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    // gasoline_blending emits only gasoline; vdu accepts only
    // atmospheric_residue — the reversed edge cannot satisfy the check.
    let bad = temp_path("bad_graph.json");
    std::fs::write(
        &bad,
        r#"{
          "format_version": "1",
          "nodes": [{"id": "blend", "unit": "gasoline_blending"},
                    {"id": "vac", "unit": "vdu"}],
          "edges": [{"from": "blend", "to": "vac"}]
        }"#,
    )
    .unwrap();
    let out = updkit(&[
        "graph", "check",
        "--kb", kb.to_str().unwrap(),
        "--graph", bad.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("violat"), "got: {stdout}");
    let _ = std::fs::remove_file(&bad);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = updkit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_heuristic_emits_a_valid_graph_and_trace() {
    let kb = fixtures().join("bench/kb.json");
    let graph_out = temp_path("synth_graph.json");
    let trace_out = temp_path("synth_trace.json");
    let out = updkit(&[
        "synth",
        "--kb", kb.to_str().unwrap(),
        "--units", "cdu, naphtha_hydrotreater, hydrogen_plant, amine_treating, sulfur_recovery",
        "--proposer", "heuristic",
        "--seed", "7",
        "--out", graph_out.to_str().unwrap(),
        "--trace", trace_out.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let graph_text = std::fs::read_to_string(&graph_out).unwrap();
    assert!(graph_text.contains("\"nodes\""));
    let trace: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&trace_out).unwrap()).unwrap();
    assert_eq!(trace["converged"], serde_json::Value::Bool(true));

    // The emitted graph is valid by the toolkit's own checker.
    let check = updkit(&[
        "graph", "check",
        "--kb", kb.to_str().unwrap(),
        "--graph", graph_out.to_str().unwrap(),
    ]);
    assert_eq!(check.status.code(), Some(0));
    let _ = std::fs::remove_file(&graph_out);
    let _ = std::fs::remove_file(&trace_out);
}

#[test]
fn bench_stage1_gt_selector_scores_ones() {
    let out = updkit(&[
        "bench", "stage1",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--selector", "gt",
        "--predicates", fixtures().join("predicates.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[overall]"));
    assert!(stdout.contains("1.0000"));
    assert!(!stdout.contains("0.9"), "oracle run must be exact: {stdout}");
}

#[test]
fn bench_stage2_json_output_is_machine_readable() {
    let out = updkit(&[
        "bench", "stage2",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--source", "gt",
        "--use-gt-units",
        "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stage2 output parses as JSON");
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert_eq!(row["nged"].as_f64(), Some(0.0));
        assert_eq!(row["cspc"].as_f64(), Some(1.0));
        assert_eq!(row["iov"].as_f64(), Some(1.0));
    }
}

#[test]
fn datagen_then_disjoint_round_trip() {
    let dataset = temp_path("dataset.jsonl");
    let stats = temp_path("stats.json");
    let out = updkit(&[
        "datagen",
        "--kb", fixtures().join("bench/kb.json").to_str().unwrap(),
        "--pairs", fixtures().join("pairs_small.json").to_str().unwrap(),
        "--predicates", fixtures().join("predicates.json").to_str().unwrap(),
        "--teacher", "template",
        "--seed", "11",
        "--out", dataset.to_str().unwrap(),
        "--stats", stats.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stats_value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    assert_eq!(stats_value["accepted"].as_u64(), Some(4));

    let out = updkit(&[
        "bench", "disjoint",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--train", dataset.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "shipped data must be disjoint");

    // Leak one bench task into the training set: the exit code flips.
    let suite = updkit::bench::load_benchmark(&fixtures().join("bench")).unwrap();
    let task = &suite.tasks[0];
    let mut rows = updkit::datagen::parse_dataset_jsonl(
        &std::fs::read_to_string(&dataset).unwrap(),
    )
    .unwrap();
    let mut leaked = rows[0].clone();
    leaked.intent = task.intent.clone();
    leaked.units = task.gt_units.clone();
    rows.push(leaked);
    std::fs::write(&dataset, updkit::datagen::write_dataset_jsonl(&rows)).unwrap();
    let out = updkit(&[
        "bench", "disjoint",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--train", dataset.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("collisions"), "got: {stdout}");

    let _ = std::fs::remove_file(&dataset);
    let _ = std::fs::remove_file(&stats);
}

#[test]
fn score_of_ground_truth_against_itself_is_perfect() {
    let out = updkit(&[
        "score",
        "--kb", fixtures().join("bench/kb.json").to_str().unwrap(),
        "--gt-graph", fixtures().join("bench/graphs/fuel.json").to_str().unwrap(),
        "--pred-graph", fixtures().join("bench/graphs/fuel.json").to_str().unwrap(),
        "--kb-rules",
        "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["nged"].as_f64(), Some(0.0));
    assert_eq!(value["iov"].as_f64(), Some(1.0));
}

#[test]
fn stage1_to_stage2_prediction_handoff() {
    let predictions = temp_path("predictions.json");
    // Build a predictions file from the stage-1 JSON output.
    let out = updkit(&[
        "bench", "stage1",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--selector", "gt",
        "--predicates", fixtures().join("predicates.json").to_str().unwrap(),
        "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let table: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let map: std::collections::BTreeMap<String, serde_json::Value> = table["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|row| {
            (
                row["task_id"].as_str().unwrap().to_string(),
                serde_json::json!({
                    "units": row["units"],
                    "rationale": row["rationale"],
                }),
            )
        })
        .collect();
    std::fs::write(&predictions, serde_json::to_string_pretty(&map).unwrap()).unwrap();

    let out = updkit(&[
        "bench", "stage2",
        "--dir", fixtures().join("bench").to_str().unwrap(),
        "--source", "synth",
        "--proposer", "heuristic",
        "--predictions", predictions.to_str().unwrap(),
        "--rationale-mode", "all",
        "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let table: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for row in table["rows"].as_array().unwrap() {
        assert_eq!(row["cspc"].as_f64(), Some(1.0), "repair realizes the critical paths");
        assert!(row["nged"].as_f64().unwrap() <= 1.0);
    }
    let _ = std::fs::remove_file(&predictions);
}
