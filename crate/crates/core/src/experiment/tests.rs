use std::path::{Path, PathBuf};

use super::*;

fn quickstart(out: PathBuf) -> ExperimentConfig {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut cfg = ExperimentConfig::load(&dir.join("quickstart.toml")).unwrap();
    cfg.output_dir = out;
    cfg
}

#[test]
fn quickstart_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quickstart(tmp.path().join("run"));
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.manifest.status, RunStatus::Complete);
    let labels: Vec<&str> = r.summary.policies.iter().map(|p| p.policy.as_str()).collect();
    assert_eq!(labels, ["none", "single-P95-24h", "coach-P95-4h"]);
    // Two policies × one mitigation × two triggers.
    assert_eq!(r.sims.len(), 4);
    assert!(r.manifest.files.iter().any(|f| f.path == "summary.json"));
    assert!(verify_manifest(&cfg.output_dir).unwrap().is_empty());

    std::fs::write(cfg.output_dir.join("summary.csv"), "tampered").unwrap();
    assert_eq!(verify_manifest(&cfg.output_dir).unwrap(), vec![Discrepancy::Changed("summary.csv".into())]);
}

#[test]
fn same_seed_gives_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = quickstart(tmp.path().join("a"));
    a.characterize.enabled = false;
    let mut b = a.clone();
    b.output_dir = tmp.path().join("b");
    let ra = run_experiment(&a).unwrap();
    let rb = run_experiment(&b).unwrap();
    assert_eq!(ra.manifest, rb.manifest);
    let read = |c: &ExperimentConfig| std::fs::read(c.output_dir.join("summary.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn missing_trace_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "seed = 1\n[trace]\ndir = \"no/such/dir\"\n";
    let mut cfg = ExperimentConfig::from_toml(text, tmp.path()).unwrap();
    cfg.output_dir = tmp.path().join("out");
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Config);
    assert!(err.to_string().contains("vms.csv"), "{err}");
    assert!(!cfg.output_dir.exists());
}

#[test]
fn config_grammar_errors() {
    let base = Path::new(".");
    let gen = "[trace]\ngenerator = \"g.toml\"\n";
    assert!(ExperimentConfig::from_toml(gen, base).unwrap_err().contains("seed"));
    let both = "seed = 1\n[trace]\ndir = \"t\"\ngenerator = \"g.toml\"\n";
    assert!(ExperimentConfig::from_toml(both, base).unwrap_err().contains("exactly one"));
    let dup = format!("seed = 1\npolicies = [\"coach\", {{ kind = \"coach\", window_hours = 4 }}]\n{gen}");
    assert!(ExperimentConfig::from_toml(&dup, base).unwrap_err().contains("twice"));
    let bad_window = format!("seed = 1\npolicies = [{{ kind = \"coach\", window_hours = 5 }}]\n{gen}");
    assert!(ExperimentConfig::from_toml(&bad_window, base).is_err());
    let unknown = format!("seed = 1\ncolour = 3\n{gen}");
    assert!(ExperimentConfig::from_toml(&unknown, base).is_err());

    let ok =
        format!("seed = 1\npolicies = [\"none\", {{ kind = \"aggr\", percentile = 60, window_hours = 6 }}]\n{gen}");
    let cfg = ExperimentConfig::from_toml(&ok, Path::new("/cfg")).unwrap();
    assert_eq!(cfg.trace.generator.as_deref(), Some(Path::new("/cfg/g.toml")));
    let p = cfg.resolved_policies().unwrap();
    assert_eq!(p[1].label(), "aggr-P60-6h");
}

#[test]
fn config_hash_ignores_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let a = quickstart(tmp.path().join("x"));
    let mut b = a.clone();
    b.output_dir = tmp.path().join("y");
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn failing_stage_leaves_incomplete_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = quickstart(tmp.path().join("run"));
    cfg.characterize.enabled = false;
    // A generator file that exists but does not parse fails in the trace stage.
    let g = tmp.path().join("bad.toml");
    std::fs::write(&g, "days = 0").unwrap();
    cfg.trace = TraceSource { generator: Some(g), ..Default::default() };
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, ExperimentError::Stage { stage: Stage::Trace, .. }));
    assert!(err.to_string().starts_with("trace: "), "{err}");
    let m = read_manifest(&cfg.output_dir).unwrap();
    assert_eq!(m.status, RunStatus::Incomplete);
    assert_eq!(m.failed_stage.as_deref(), Some("trace"));
}

#[test]
fn split_by_start_day() {
    let cfg = crate::trace::generate::tests::small_config();
    let t = generate_synthetic_trace(&cfg, 3).unwrap();
    let (h, e) = split_trace(&t, 1);
    assert_eq!(h.len() + e.len(), t.len());
    let cutoff = cfg.start_unix + DAY_SECS;
    assert!(h.vms().iter().all(|v| v.start < cutoff) && e.vms().iter().all(|v| v.start >= cutoff));
}
