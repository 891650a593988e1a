//! Replays the checked-in fuzz seed corpora through the same parsers the
//! fuzz targets drive, so crashes in seeds show up under `cargo test`.

use std::path::{Path, PathBuf};

use oversub::experiment::{ExperimentConfig, Manifest};
use oversub::trace::{parse_servers, parse_util, parse_vms, GenConfig};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn count_ok<T, E>(results: impl Iterator<Item = Result<T, E>>) -> (usize, usize) {
    results.fold((0, 0), |(ok, err), r| if r.is_ok() { (ok + 1, err) } else { (ok, err + 1) })
}

#[test]
fn vms_seeds() {
    let (ok, err) = count_ok(seeds("parse_vms").iter().map(|(_, b)| parse_vms(b.as_slice(), "vms.csv")));
    assert!(ok >= 2 && err >= 3, "{ok} ok, {err} rejected");
}

#[test]
fn servers_seeds() {
    let (ok, err) = count_ok(seeds("parse_servers").iter().map(|(_, b)| parse_servers(b.as_slice(), "servers.csv")));
    assert!(ok >= 1 && err >= 2, "{ok} ok, {err} rejected");
}

#[test]
fn util_seeds() {
    let vms = parse_vms(
        "vm_id,subscription_id,vm_config,cpu_cores,mem_gb,net_gbps,ssd_gb,start_unix,end_unix,offering\n\
         vm-a,s1,D2,2,8,1,32,0,3600,iaas\n\
         vm-b,s1,D2,2,8,1,32,300,3900,paas\n"
            .as_bytes(),
        "vms.csv",
    )
    .unwrap();
    let all = seeds("parse_util");
    let (ok, err) = count_ok(all.iter().map(|(_, b)| parse_util(b.as_slice(), "util.csv", &vms)));
    assert!(ok >= 1 && err >= 3, "{ok} ok, {err} rejected");
}

#[test]
fn gen_config_seeds() {
    let all = seeds("parse_gen_config");
    let (ok, err) = count_ok(all.iter().map(|(_, b)| GenConfig::from_toml(std::str::from_utf8(b).unwrap())));
    assert!(ok >= 2 && err >= 2, "{ok} ok, {err} rejected");
}

#[test]
fn experiment_config_seeds() {
    let all = seeds("parse_experiment_config");
    let parsed: Vec<_> = all
        .iter()
        .map(|(p, b)| (p, ExperimentConfig::from_toml(std::str::from_utf8(b).unwrap(), Path::new("/base"))))
        .collect();
    for (p, r) in &parsed {
        let name = p.file_name().unwrap().to_str().unwrap();
        let expect_ok = !matches!(name, "no_seed" | "two_sources");
        assert_eq!(r.is_ok(), expect_ok, "{name}: {r:?}");
    }
}

#[test]
fn manifest_seeds() {
    for (p, b) in seeds("parse_manifest") {
        let r = serde_json::from_slice::<Manifest>(&b);
        let bad = p.ends_with("bad_status");
        assert_eq!(r.is_err(), bad, "{}", p.display());
    }
}
