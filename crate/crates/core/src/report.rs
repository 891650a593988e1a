//! Policy-comparison summary and the CSV views of simulation output.

use std::io::Write;

use serde::Serialize;

use crate::characterize::Distribution;
use crate::resource::{Resource, ResourceVector};
use crate::scheduler::{capacity_gain, CapacityGain, PlacementLog, PolicyKind};
use crate::simulate::{MitigationKind, MitigationPolicy, SimReport, Trigger};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("inputs come from different traces: {0}")]
    Mismatch(String),
    #[error("no placement log for simulated policy {0}")]
    MissingLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationStats {
    pub kind: MitigationKind,
    pub count: usize,
    pub latency_secs: Option<Distribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationRow {
    pub mitigation: MitigationPolicy,
    pub trigger: Trigger,
    pub violation_share_pct: ResourceVector,
    pub memory_violation_secs: f64,
    pub episodes: usize,
    pub episode_duration_secs: Option<Distribution>,
    pub mitigations: Vec<MitigationStats>,
    pub blocked_migrations: usize,
    pub worst_slowdown: f64,
    pub per_vm_max_slowdown: Option<Distribution>,
    pub mem_under_allocation_rate_pct: f64,
    pub cpu_under_allocation_rate_pct: f64,
    pub mem_mean_over_error_pct: f64,
    pub cpu_mean_over_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyRow {
    pub policy: String,
    pub hosted_vms: usize,
    pub rejected_vms: usize,
    pub predicted_vms: usize,
    pub hosted_resource_hours: ResourceVector,
    pub servers_touched: usize,
    pub peak_nonempty_servers: usize,
    /// Relative to the `none` policy, when one is present.
    pub gain_vs_none: Option<CapacityGain>,
    pub simulations: Vec<SimulationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub trace_fingerprint: Option<String>,
    pub policies: Vec<PolicyRow>,
}

fn simulation_row(r: &SimReport) -> SimulationRow {
    let ae = &r.allocation_error;
    SimulationRow {
        mitigation: r.mitigation,
        trigger: r.trigger,
        violation_share_pct: r.violation_share_pct,
        memory_violation_secs: r.violation_secs.mem,
        episodes: r.memory_episodes.len(),
        episode_duration_secs: r.episode_duration_secs,
        mitigations: [MitigationKind::Trim, MitigationKind::Extend, MitigationKind::Migrate]
            .into_iter()
            .map(|kind| MitigationStats { kind, count: r.mitigation_count(kind), latency_secs: r.latency_of(kind) })
            .collect(),
        blocked_migrations: r.blocked_migrations.len(),
        worst_slowdown: r.slowdown.worst,
        per_vm_max_slowdown: r.slowdown.per_vm_max,
        mem_under_allocation_rate_pct: ae.predicted_for(Resource::Mem).under_allocation_rate_pct,
        cpu_under_allocation_rate_pct: ae.predicted_for(Resource::Cpu).under_allocation_rate_pct,
        mem_mean_over_error_pct: ae.predicted_for(Resource::Mem).mean_over_error_pct,
        cpu_mean_over_error_pct: ae.predicted_for(Resource::Cpu).mean_over_error_pct,
    }
}

/// One row per placement log, in the order given, with the simulations of
/// that policy attached. Refuses inputs built from different traces.
pub fn emit_report(logs: &[PlacementLog], sims: &[SimReport]) -> Result<Summary, ReportError> {
    let fingerprint = logs.first().map(|l| l.trace_fingerprint.clone());
    for l in logs {
        if Some(&l.trace_fingerprint) != fingerprint.as_ref() {
            return Err(ReportError::Mismatch(format!("policy {}", l.policy.label())));
        }
    }
    for s in sims {
        if Some(&s.trace_fingerprint) != fingerprint.as_ref() {
            return Err(ReportError::Mismatch(format!("simulation of {}", s.policy)));
        }
        if !logs.iter().any(|l| l.policy.label() == s.policy) {
            return Err(ReportError::MissingLog(s.policy.clone()));
        }
    }
    let baseline = logs.iter().find(|l| l.policy.kind == PolicyKind::None);
    let mut policies = Vec::with_capacity(logs.len());
    for log in logs {
        let label = log.policy.label();
        let gain_vs_none = match baseline {
            Some(b) => Some(capacity_gain(b, log).map_err(|e| ReportError::Mismatch(e.to_string()))?),
            None => None,
        };
        let s = &log.summary;
        policies.push(PolicyRow {
            hosted_vms: s.hosted_vms,
            rejected_vms: s.rejected_vms,
            predicted_vms: s.predicted_vms,
            hosted_resource_hours: s.hosted_resource_hours,
            servers_touched: s.servers_touched,
            peak_nonempty_servers: s.peak_nonempty_servers,
            gain_vs_none,
            simulations: sims.iter().filter(|r| r.policy == label).map(simulation_row).collect(),
            policy: label,
        });
    }
    Ok(Summary { schema_version: SUMMARY_SCHEMA_VERSION, trace_fingerprint: fingerprint, policies })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Flat per-(policy, mitigation, trigger) table of the summary.
pub fn write_summary_csv<W: Write>(summary: &Summary, w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "schema_version",
        "policy",
        "hosted_vms",
        "rejected_vms",
        "gain_vms_pct",
        "gain_cpu_hours_pct",
        "gain_mem_hours_pct",
        "mitigation",
        "trigger",
        "cpu_violation_pct",
        "mem_violation_pct",
        "episodes",
        "trim_count",
        "extend_count",
        "migrate_count",
        "worst_slowdown",
        "mem_under_alloc_pct",
        "cpu_under_alloc_pct",
    ])?;
    for p in &summary.policies {
        let gain = p.gain_vs_none.as_ref();
        let base = vec![
            SUMMARY_SCHEMA_VERSION.to_string(),
            p.policy.clone(),
            p.hosted_vms.to_string(),
            p.rejected_vms.to_string(),
            fmt_opt(gain.map(|g| g.hosted_vms_pct)),
            fmt_opt(gain.map(|g| g.resource_hours_pct.cpu)),
            fmt_opt(gain.map(|g| g.resource_hours_pct.mem)),
        ];
        if p.simulations.is_empty() {
            let mut row = base.clone();
            row.extend(std::iter::repeat_n(String::new(), 11));
            out.write_record(&row)?;
        }
        for s in &p.simulations {
            let mut row = base.clone();
            let count = |k: MitigationKind| s.mitigations.iter().find(|m| m.kind == k).map_or(0, |m| m.count);
            row.extend([
                s.mitigation.as_str().to_string(),
                s.trigger.as_str().to_string(),
                s.violation_share_pct.cpu.to_string(),
                s.violation_share_pct.mem.to_string(),
                s.episodes.to_string(),
                count(MitigationKind::Trim).to_string(),
                count(MitigationKind::Extend).to_string(),
                count(MitigationKind::Migrate).to_string(),
                s.worst_slowdown.to_string(),
                s.mem_under_allocation_rate_pct.to_string(),
                s.cpu_under_allocation_rate_pct.to_string(),
            ]);
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_episodes_csv<W: Write>(report: &SimReport, w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["server_id", "start_unix", "end_unix", "duration_secs"])?;
    for e in &report.memory_episodes {
        out.write_record([e.server_id.clone(), e.start.to_string(), e.end.to_string(), e.duration().to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_mitigations_csv<W: Write>(report: &SimReport, w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "time_unix",
        "server_id",
        "kind",
        "trigger",
        "amount_gb",
        "latency_secs",
        "completes_at",
        "vm_id",
        "destination",
    ])?;
    for m in &report.mitigations {
        out.write_record([
            m.time.to_string(),
            m.server_id.clone(),
            m.kind.as_str().to_string(),
            m.trigger.as_str().to_string(),
            m.amount_gb.to_string(),
            m.latency_secs.to_string(),
            m.completes_at.to_string(),
            m.vm_id.clone().unwrap_or_default(),
            m.destination.clone().unwrap_or_default(),
        ])?;
    }
    for b in &report.blocked_migrations {
        out.write_record([
            b.time.to_string(),
            b.server_id.clone(),
            "migrate_blocked".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            b.vm_id.clone(),
            String::new(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Pool timeline for plotting: one row per server per monitor period.
pub fn write_timeline_csv<W: Write>(report: &SimReport, w: W) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time_unix", "server_id", "pool_gb", "backed_gb", "free_gb", "unmet_gb", "violation"])?;
    for t in &report.timeline {
        out.write_record([
            t.time.to_string(),
            t.server_id.clone(),
            t.pool_gb.to_string(),
            t.backed_gb.to_string(),
            t.free_gb.to_string(),
            t.unmet_gb.to_string(),
            (t.unmet_gb > 1e-9).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::{schedule, PlacementConfig, Policy};
    use crate::trace::{Offering, Server, TraceSet, UtilizationSeries, VmRecord};

    fn trace(level: f32) -> TraceSet {
        let vms = (0..4)
            .map(|i| VmRecord {
                vm_id: format!("v{i}"),
                subscription_id: "s".into(),
                vm_config: "D2".into(),
                requested: ResourceVector::new(2.0, 8.0, 1.0, 32.0),
                start: 0,
                end: 3600,
                offering: Offering::Iaas,
            })
            .collect::<Vec<_>>();
        let series = vms
            .iter()
            .map(|v| Resource::ALL.map(|r| UtilizationSeries::new(v.vm_id.clone(), r, 0, vec![level; 12])))
            .collect();
        let servers = vec![Server {
            server_id: "s0".into(),
            cluster_id: "c".into(),
            capacity: ResourceVector::new(16.0, 64.0, 10.0, 512.0),
        }];
        TraceSet::new(vms, series, servers).unwrap()
    }

    #[test]
    fn one_row_per_policy_and_refuses_mixed_traces() {
        let t = trace(20.0);
        let cfg = PlacementConfig::default();
        let none = schedule(&t, None, &Policy::NONE, t.servers(), &cfg).unwrap();
        let none2 = schedule(&t, None, &Policy::NONE, t.servers(), &cfg).unwrap();
        let s = emit_report(&[none.clone(), none2], &[]).unwrap();
        assert_eq!(s.policies.len(), 2);
        assert_eq!(s.schema_version, SUMMARY_SCHEMA_VERSION);
        assert_eq!(s.policies[0].gain_vs_none.as_ref().unwrap().hosted_vms_pct, 0.0);

        let other = trace(30.0);
        let foreign = schedule(&other, None, &Policy::NONE, other.servers(), &cfg).unwrap();
        assert!(matches!(emit_report(&[none, foreign], &[]), Err(ReportError::Mismatch(_))));
    }

    #[test]
    fn empty_inputs_give_valid_report() {
        let s = emit_report(&[], &[]).unwrap();
        assert!(s.policies.is_empty() && s.trace_fingerprint.is_none());
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
