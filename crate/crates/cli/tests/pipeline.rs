mod common;

use std::fs;
use std::path::Path;

use common::{test_data, without_provenance, Workspace, PIPELINE_OUTPUTS};

#[test]
fn pipeline_is_byte_identical_across_runs_and_job_counts() {
    let a = Workspace::new();
    let b = Workspace::new();
    a.pipeline("1");
    b.pipeline("4");
    for f in PIPELINE_OUTPUTS {
        assert!(a.read(f) == b.read(f), "{f} differs between runs");
    }
}

#[test]
fn outputs_match_goldens() {
    let ws = Workspace::new();
    ws.pipeline("2");
    let golden = common::golden_dir();
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    for f in common::GOLDEN_OUTPUTS {
        let name = Path::new(f).file_name().unwrap();
        let path = golden.join(name);
        let actual = ws.read(f);
        if update {
            fs::write(&path, &actual).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing golden {}; rerun with UPDATE_GOLDENS=1", path.display()));
        assert!(actual == expected, "{f} does not match {}", path.display());
    }
}

#[test]
fn provenance_records_command_and_config_but_not_jobs() {
    let ws = Workspace::new();
    ws.ok(&["extract", "--config", "run.conf", "-j", "3", "--out", "out/predictions.jsonl"]);
    let first = ws.read("out/predictions.jsonl").lines().next().unwrap().to_string();
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    let p = &v["provenance"];
    assert_eq!(p["tool"], "statelink");
    assert_eq!(p["command"], "extract");
    assert_eq!(p["config"]["corpus"], "fixtures/corpus.jsonl");
    assert_eq!(p["config"]["shots"], 2);
    assert!(!first.contains("jobs"));
}

#[test]
fn replay_backend_reproduces_rule_mock_predictions() {
    let ws = Workspace::new();
    fs::copy(test_data("replay.jsonl"), ws.path("replay.jsonl")).unwrap();
    ws.ok(&["extract", "--config", "run.conf", "--out", "out/mock.jsonl"]);
    ws.ok(&["extract", "--config", "run.conf", "--backend", "replay", "--replay", "replay.jsonl", "--out", "out/replay.jsonl"]);
    assert_eq!(without_provenance(&ws.read("out/mock.jsonl")), without_provenance(&ws.read("out/replay.jsonl")));
}

#[test]
fn replay_miss_exits_2_and_keeps_completed_turns() {
    let ws = Workspace::new();
    // keep only the first dialogue's exchanges
    let replay = fs::read_to_string(test_data("replay.jsonl")).unwrap();
    let partial: String = replay.lines().take(2).map(|l| format!("{l}\n")).collect();
    fs::write(ws.path("partial.jsonl"), partial).unwrap();
    let out = ws.run(&["extract", "--config", "run.conf", "--backend", "replay", "--replay", "partial.jsonl", "--out", "out/p.jsonl"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("extraction stopped at dialogue"), "{stderr}");
    let written = without_provenance(&ws.read("out/p.jsonl"));
    assert_eq!(written.lines().count(), 2);
}

#[test]
fn record_replay_appends_one_entry_per_turn() {
    let ws = Workspace::new();
    ws.ok(&["extract", "--config", "run.conf", "--out", "out/p.jsonl", "--record-replay", "rec.jsonl"]);
    assert_eq!(ws.read("rec.jsonl"), fs::read_to_string(test_data("replay.jsonl")).unwrap());
}

#[test]
fn user_errors_exit_1() {
    let ws = Workspace::new();
    fs::write(ws.path("empty.jsonl"), "").unwrap();
    let cases: &[&[&str]] = &[
        &["extract", "--keywords", "fixtures/keywords.tsv", "--out", "out/x.jsonl"],
        &["extract", "--config", "run.conf", "--corpus", "empty.jsonl", "--out", "out/x.jsonl"],
        &["extract", "--config", "run.conf", "--corpus", "missing.jsonl", "--out", "out/x.jsonl"],
        &["extract", "--config", "run.conf", "--shots", "9", "--out", "out/x.jsonl"],
        &["extract", "--config", "missing.conf"],
        &["train", "--config", "run.conf", "--epochs", "many"],
        &["train", "--config", "run.conf"],
        &["evaluate", "--config", "run.conf", "--out", "out/x.json"],
        &["extract", "--token", "abc"],
        &["nonsense"],
    ];
    for args in cases {
        let out = ws.run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!ws.path("out/x.jsonl").exists());
}

#[test]
fn evaluate_rejects_misaligned_predictions() {
    let ws = Workspace::new();
    ws.ok(&["extract", "--config", "run.conf", "--out", "out/predictions.jsonl"]);
    let text = ws.read("out/predictions.jsonl");
    fs::write(ws.path("out/renamed.jsonl"), text.replace("fx-03", "fx-99")).unwrap();
    let out = ws.run(&["evaluate", "--config", "run.conf", "--predictions", "out/renamed.jsonl", "--out", "out/r.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ws.path("out/r.json").exists());
}

#[test]
fn delta_mode_evaluation_runs() {
    let ws = Workspace::new();
    ws.ok(&["extract", "--config", "run.conf", "--out", "out/predictions.jsonl"]);
    ws.ok(&["evaluate", "--config", "run.conf", "--state-mode", "delta", "--out", "out/delta.json"]);
    let v: serde_json::Value = serde_json::from_str(&ws.read("out/delta.json")).unwrap();
    assert_eq!(v["state_mode"], "delta");
    let jga = v["jga"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&jga));
}

#[test]
fn graph_from_gold_states() {
    let ws = Workspace::new();
    ws.ok(&["graph", "--config", "run.conf", "--graph-source", "gold", "--graph-dir", "out/gold"]);
    let nodes = ws.read("out/gold/nodes.jsonl");
    assert!(nodes.contains("\"hotel\""));
    assert!(!nodes.contains("5 nights"), "gold graph must not contain extraction errors");
}

#[test]
fn repl_tracks_state_and_survives_bad_input() {
    let ws = Workspace::new();
    let input = "I want asian food\n\n:reset\n\u{1F600} ??? Domain : [\nI need a cheap hotel in the north\n:quit\nnever read\n";
    let out = ws.run_with_stdin(&["repl", "--keywords", "fixtures/keywords.tsv"], Some(input));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "(restaurant, food, asian)");
    assert!(lines.contains(&"(state cleared)"));
    assert!(lines.contains(&"(hotel, area, north)"));
    assert!(lines.contains(&"(hotel, pricerange, cheap)"));
    let after_reset = &lines[lines.iter().position(|l| *l == "(state cleared)").unwrap()..];
    assert!(!after_reset.contains(&"(restaurant, food, asian)"));
}

#[test]
fn repl_with_model_prints_ranked_pairs() {
    let ws = Workspace::new();
    ws.pipeline("1");
    let out = ws.run_with_stdin(&["repl", "--config", "run.conf"], Some("a cheap hotel in the east please\n"));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let pairs: Vec<&str> = stdout.lines().filter(|l| l.trim_start().starts_with("Node pair: (['hotel'], [")).collect();
    assert_eq!(pairs.len(), 3, "{stdout}");
    assert!(pairs.iter().all(|l| l.contains("Probability: 0.")));
}
