use std::path::Path;
use std::process::{Command, Output};

use dt_core::fixtures;

fn dt(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dt"));
    cmd.env("DT_NO_COLOR", "1").args(args);
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().expect("dt runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(n: u8) -> String {
    fixtures::scenario_path(n).display().to_string()
}

#[test]
fn missing_inputs_exit_2_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = dt(&["monitor", "/no/such/transcript.jsonl"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/transcript.jsonl"));

    let o = dt(&["validate-corpus", "--corpus", "/no/such/corpus.json"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/corpus.json"));

    let s1 = scenario(1);
    let o = dt(&["monitor", &s1, "--config", "/no/such/config.json"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/config.json"));
}

#[test]
fn validate_corpus_reports_the_fixture() {
    let o = dt(&["validate-corpus"], None);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("8 categories, 6 strategies, 47 actions"));
}

#[test]
fn monitor_writes_manifest_frames_and_windows() {
    let dir = tempfile::tempdir().unwrap();
    let o = dt(&["monitor", &scenario(2)], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(!text.contains('\x1b'));
    assert!(text.contains("turns 3-8: category=location"), "{text}");
    for f in ["manifest.json", "frames.csv", "windows.txt", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["stall_windows"].as_array().unwrap().len(), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "monitor");
    assert_eq!(manifest["inputs"]["transcript"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_is_applied_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"telemetry": {"theta": 0.95}, "episode": {"seed": 4}}"#).unwrap();
    let out = dir.path().join("m");
    let o = dt(&["monitor", &scenario(2), "--config", cfg.to_str().unwrap(), "--seed", "9"], Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    // SI is compressed below 1, so nothing clears theta = 0.95.
    assert!(stdout(&o).starts_with("0/20 turns flagged"), "{}", stdout(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["telemetry"]["theta"], 0.95);
    assert_eq!(manifest["seed"], 9);

    std::fs::write(&cfg, r#"{"telemetry": {"thetaa": 0.5}}"#).unwrap();
    let o = dt(&["monitor", &scenario(2), "--config", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_replays_a_script_under_condition_b() {
    let dir = tempfile::tempdir().unwrap();
    let o = dt(&["simulate", "--script", &scenario(2), "--condition", "B"], Some(dir.path()));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("termination stall_terminated"), "{}", stdout(&o));
    for f in ["manifest.json", "frames.csv", "records.jsonl", "summary.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn train_resumes_and_reports_corrupt_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("camp");
    let args = ["train", "--condition", "A", "--variants", "baseline,full_dt", "--runs", "2", "--timesteps", "1024", "--jobs", "2"];
    let o = dt(&args, Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("End of training"));
    for f in ["manifest.json", "table.csv", "table.txt", "A_full_dt/window_curves.csv", "A_full_dt/run_1/policy.bin"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let table = std::fs::read(out.join("table.csv")).unwrap();

    // A second invocation finds every run complete and rebuilds the same table.
    let o = dt(&args, Some(&out));
    assert!(o.status.success());
    assert!(stderr(&o).contains("4 complete runs"), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("table.csv")).unwrap(), table);

    // The saved policy drives a greedy episode.
    let policy = out.join("A_full_dt/run_0/policy.bin");
    let o = dt(&["simulate", "--policy", policy.to_str().unwrap()], Some(&dir.path().join("sim")));
    assert!(o.status.success(), "{}", stderr(&o));

    std::fs::write(out.join("A_baseline/run_1/summary.json"), "{").unwrap();
    let o = dt(&args, Some(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("A_baseline/run_1"), "{}", stderr(&o));
    assert!(out.join("table.csv").is_file());

    // A different campaign in the same directory is refused.
    let mut other = args.to_vec();
    other[6] = "3";
    let o = dt(&other, Some(&out));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("different campaign"));
}
