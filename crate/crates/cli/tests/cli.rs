use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oversub() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_oversub"));
    c.env_remove("OVERSUB_OUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const GEN: &str = r#"
days = 3
vm_count = 60
subscriptions = 4
initial_fraction = 0.5
[duration]
median_hours = 40
sigma = 0.5
[[sizes]]
name = "D4"
cpu = 4
mem_gb = 16
[[templates]]
name = "day"
cpu = { base = 10, jitter = 3, segments = [{ start_hour = 8, end_hour = 12, level = 60 }] }
mem = { base = 20, jitter = 1, spike_prob = 0.0002, spike_height = 30, segments = [{ start_hour = 8, end_hour = 12, level = 50 }] }
[[fleet]]
count = 2
cpu = 32
mem_gb = 128
"#;

fn generated(dir: &Path) -> PathBuf {
    let cfg = dir.join("gen.toml");
    std::fs::write(&cfg, GEN).unwrap();
    let trace = dir.join("trace");
    let o =
        oversub().args(["generate", "--seed", "5", "--config"]).arg(&cfg).arg("--out").arg(&trace).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    trace
}

#[test]
fn run_quickstart_with_env_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("qs");
    let o =
        oversub().args(["run"]).arg(configs().join("quickstart.toml")).env("OVERSUB_OUT_DIR", &out).output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert_eq!(summary["policies"].as_array().unwrap().len(), 3);

    let v = oversub().arg("verify").arg(&out).output().unwrap();
    assert_eq!(code(&v), 0);
    std::fs::write(out.join("summary.json"), "{}").unwrap();
    let v = oversub().arg("verify").arg(&out).output().unwrap();
    assert_eq!(code(&v), 3);
}

#[test]
fn missing_trace_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(&cfg, "seed = 1\n[trace]\ndir = \"absent\"\n").unwrap();
    let out = tmp.path().join("out");
    let o = oversub().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent"));
    assert!(!out.exists());
}

#[test]
fn config_without_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    std::fs::write(&cfg, "[trace]\ndir = \".\"\n").unwrap();
    let o = oversub().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn malformed_trace_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = generated(tmp.path());
    std::fs::write(trace.join("util.csv"), "vm_id,resource,timestamp_unix,max_util_pct\nvm-000000,mem,0,abc\n")
        .unwrap();
    let o = oversub().args(["schedule", "--policy", "none", "--trace"]).arg(&trace).output().unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stage_subcommands_on_a_generated_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = generated(tmp.path());
    let out = tmp.path().join("o");
    let run = |args: &[&str], sub: &str| {
        let o = oversub().args(args).arg("--trace").arg(&trace).arg("--out").arg(out.join(sub)).output().unwrap();
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["characterize", "--window-hours", "4", "--window-hours", "24", "--fill-shape", "2:8"], "c");
    assert!(out.join("c/characterization.json").is_file() && out.join("c/stranding.json").is_file());
    run(&["predict", "--train-days", "1", "--window-hours", "4", "--percentile", "90", "--min-group-size", "2"], "p");
    let profiles = std::fs::read_to_string(out.join("p/profiles.csv")).unwrap();
    assert!(profiles.starts_with("vm_id,group,resource,window,p_max,p_x"));
    run(&["schedule", "--train-days", "1", "--policy", "coach"], "s");
    assert!(out.join("s/placements.csv").is_file());
    run(
        &[
            "simulate",
            "--train-days",
            "1",
            "--policy",
            "aggr",
            "--mitigation",
            "trim",
            "--trigger",
            "reactive",
            "--cold-fraction",
            "0.5",
            "--seed",
            "3",
            "--timeline",
        ],
        "m",
    );
    for f in ["report.json", "episodes.csv", "mitigations.csv", "timeline.csv", "summary.csv"] {
        assert!(out.join("m").join(f).is_file(), "{f}");
    }
}

#[test]
fn bad_flags_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = generated(tmp.path());
    let cases: [&[&str]; 4] = [
        &["characterize", "--fill-shape", "4x16"],
        &["schedule", "--policy", "greedy"],
        &["schedule", "--policy", "single", "--window-hours", "4"],
        &["simulate", "--cold-fraction", "2"],
    ];
    for args in cases {
        let o =
            oversub().args(args).arg("--trace").arg(&trace).arg("--out").arg(tmp.path().join("x")).output().unwrap();
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
