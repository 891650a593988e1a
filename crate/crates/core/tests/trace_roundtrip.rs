use oversub::trace::{
    parse_trace, parse_trace_from_readers, write_servers, write_trace, write_util, write_vms, Offering, Server,
    TraceSet, UtilizationSeries, VmRecord, STEP_SECS,
};
use oversub::{Resource, ResourceVector};
use proptest::prelude::*;

fn assert_same(a: &TraceSet, b: &TraceSet) {
    assert_eq!(a.vms(), b.vms());
    assert_eq!(a.servers(), b.servers());
    for i in 0..a.len() {
        assert_eq!(a.series_of(i), b.series_of(i));
    }
    assert_eq!(a.fingerprint(), b.fingerprint());
}

fn reparse(t: &TraceSet) -> TraceSet {
    let (mut vms, mut util, mut servers) = (Vec::new(), Vec::new(), Vec::new());
    write_vms(&mut vms, t.vms()).unwrap();
    write_util(&mut util, t).unwrap();
    write_servers(&mut servers, t.servers()).unwrap();
    parse_trace_from_readers(&vms[..], "vms", &util[..], "util", &servers[..], "servers").unwrap()
}

prop_compose! {
    fn arb_vm(idx: usize)(
        sub in 0..4u8,
        cpu in 1..64u32,
        mem in 1..512u32,
        start_step in 0..200i64,
        values in prop::collection::vec(prop::array::uniform4(0.0f32..=100.0), 1..40),
        paas in any::<bool>(),
    ) -> (VmRecord, [UtilizationSeries; 4]) {
        let id = format!("vm-{idx}");
        let start = 1_714_953_600 + start_step * STEP_SECS;
        let vm = VmRecord {
            vm_id: id.clone(),
            subscription_id: format!("sub-{sub}"),
            vm_config: format!("C{cpu}"),
            requested: ResourceVector::new(cpu as f64 * 0.25, mem as f64 * 0.5, 0.1 * (cpu % 7 + 1) as f64, 32.0),
            start,
            end: start + values.len() as i64 * STEP_SECS,
            offering: if paas { Offering::Paas } else { Offering::Iaas },
        };
        let series = Resource::ALL.map(|r| UtilizationSeries::new(id.clone(), r, start, values.iter().map(|v| v[r.index()]).collect()));
        (vm, series)
    }
}

fn arb_trace() -> impl Strategy<Value = TraceSet> {
    (1..6usize).prop_flat_map(|n| (0..n).map(arb_vm).collect::<Vec<_>>()).prop_map(|pairs| {
        let (vms, series): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let servers = vec![Server {
            server_id: "s1".into(),
            cluster_id: "c1".into(),
            capacity: ResourceVector::new(48.0, 384.0, 40.0, 2000.0),
        }];
        TraceSet::new(vms, series, servers).unwrap()
    })
}

proptest! {
    #[test]
    fn csv_round_trip_is_lossless(trace in arb_trace()) {
        assert_same(&trace, &reparse(&trace));
    }
}

#[test]
fn directory_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = oversub::trace::GenConfig::from_toml(
        r#"
days = 2
vm_count = 40
subscriptions = 5
[duration]
median_hours = 10
sigma = 0.8
[[sizes]]
name = "D2"
cpu = 2
mem_gb = 8
[[templates]]
name = "t"
cpu = { base = 20, jitter = 5 }
mem = { base = 40, jitter = 2 }
[[fleet]]
count = 3
cpu = 16
mem_gb = 64
"#,
    )
    .unwrap();
    let trace = oversub::trace::generate_synthetic_trace(&cfg, 4).unwrap();
    write_trace(tmp.path(), &trace).unwrap();
    let back = parse_trace(&tmp.path().join("vms.csv"), &tmp.path().join("util.csv"), &tmp.path().join("servers.csv"))
        .unwrap();
    assert_same(&trace, &back);
}
