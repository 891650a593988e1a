//! Replay of a placement against the utilization trace. Memory is tracked at
//! the monitor period (20s) with pool pages handed out on demand; contention
//! on the memory pool is mitigated by trimming cold pages, extending the
//! pool from unallocated memory or migrating a VM away. CPU, network and SSD
//! contention is measured only.

mod alloc_error;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use alloc_error::{allocation_error, AllocationErrorReport, ResourceAllocationError};

use crate::characterize::Distribution;
use crate::hybrid::{HybridAllocation, HybridError, ServerState};
use crate::predict::{Ewma, HorizonPredictor, DEFAULT_EWMA_ALPHA};
use crate::resource::{Resource, ResourceVector};
use crate::scheduler::{best_fit_among, inputs_fingerprint, PlacementLog};
use crate::trace::{Timestamp, TraceSet, STEP_SECS};

pub const MONITOR_SECS: i64 = 20;
pub const TICKS_PER_STEP: i64 = STEP_SECS / MONITOR_SECS;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

const EPS: f64 = 1e-9;
/// Smallest amount a trim pass takes from a VM with stale pages.
const TRIM_FLOOR_GB: f64 = 0.1;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid contention config: {0}")]
    Config(String),
    #[error("placement log does not belong to this trace: {0}")]
    Mismatch(String),
    #[error("invariant violated at {time}s: {reason}")]
    Invariant { time: f64, reason: String },
    #[error("vm {vm_id}: {resource} series does not cover its lifetime")]
    MissingSeries { vm_id: String, resource: Resource },
    #[error(transparent)]
    Hybrid(#[from] HybridError),
}

/// Contention thresholds and mitigation speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContentionConfig {
    /// CPU demand above this fraction of capacity counts as contention.
    pub cpu_threshold: f64,
    /// Share of a VM's backed but unused pages that is cold.
    pub cold_fraction: f64,
    pub trim_gbps: f64,
    pub extend_gbps: f64,
    pub migrate_gbps: f64,
    pub migrate_setup_secs: f64,
    pub ewma_alpha: f64,
    pub horizon_window_hours: u32,
    /// Slowdown factor is `1 + penalty * unmet / demand`.
    pub slowdown_penalty: f64,
    /// CPU wait share and utilization that fire the reactive CPU trigger.
    pub cpu_wait_trigger: f64,
    pub cpu_util_trigger: f64,
    pub record_timeline: bool,
    pub check_invariants: bool,
}

impl Default for ContentionConfig {
    fn default() -> Self {
        ContentionConfig {
            cpu_threshold: 0.5,
            cold_fraction: 0.3,
            trim_gbps: 1.1,
            extend_gbps: 15.7,
            migrate_gbps: 1.0,
            migrate_setup_secs: 30.0,
            ewma_alpha: DEFAULT_EWMA_ALPHA,
            horizon_window_hours: 1,
            slowdown_penalty: 3.3,
            cpu_wait_trigger: 0.001,
            cpu_util_trigger: 0.2,
            record_timeline: false,
            check_invariants: false,
        }
    }
}

impl ContentionConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.cpu_threshold > 0.0 && self.cpu_threshold <= 1.0) {
            return bad(format!("cpu_threshold {} outside (0, 1]", self.cpu_threshold));
        }
        if !(0.0..=1.0).contains(&self.cold_fraction) {
            return bad(format!("cold_fraction {} outside [0, 1]", self.cold_fraction));
        }
        for (name, v) in
            [("trim_gbps", self.trim_gbps), ("extend_gbps", self.extend_gbps), ("migrate_gbps", self.migrate_gbps)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.migrate_setup_secs >= 0.0 && self.migrate_setup_secs.is_finite()) {
            return bad(format!("migrate_setup_secs {} must be >= 0", self.migrate_setup_secs));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return bad(format!("ewma_alpha {} outside (0, 1]", self.ewma_alpha));
        }
        if crate::trace::windows_per_day(self.horizon_window_hours).is_none() {
            return bad(format!("horizon_window_hours {} does not divide 24", self.horizon_window_hours));
        }
        if !(self.slowdown_penalty >= 0.0 && self.slowdown_penalty.is_finite()) {
            return bad(format!("slowdown_penalty {} must be >= 0", self.slowdown_penalty));
        }
        Ok(())
    }

    pub fn trim_latency(&self, gb: f64) -> f64 {
        gb / self.trim_gbps
    }

    pub fn extend_latency(&self, gb: f64) -> f64 {
        gb / self.extend_gbps
    }

    pub fn migration_latency(&self, footprint_gb: f64) -> f64 {
        footprint_gb / self.migrate_gbps + self.migrate_setup_secs
    }
}

/// Which mitigation tiers are enabled. Escalation always runs trim, extend,
/// evict, migrate in that order over the enabled tiers. Eviction of
/// low-priority VMs is a placeholder tier and frees nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MitigationPolicy {
    None,
    Trim,
    /// Trim, then extend the pool.
    Extend,
    /// Trim, then migrate.
    Migrate,
    /// Trim, extend, migrate.
    Full,
}

impl MitigationPolicy {
    pub const ALL: [MitigationPolicy; 5] = [
        MitigationPolicy::None,
        MitigationPolicy::Trim,
        MitigationPolicy::Extend,
        MitigationPolicy::Migrate,
        MitigationPolicy::Full,
    ];

    pub fn trims(self) -> bool {
        self != MitigationPolicy::None
    }

    pub fn extends(self) -> bool {
        matches!(self, MitigationPolicy::Extend | MitigationPolicy::Full)
    }

    pub fn migrates(self) -> bool {
        matches!(self, MitigationPolicy::Migrate | MitigationPolicy::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MitigationPolicy::None => "none",
            MitigationPolicy::Trim => "trim",
            MitigationPolicy::Extend => "extend",
            MitigationPolicy::Migrate => "migrate",
            MitigationPolicy::Full => "full",
        }
    }
}

impl fmt::Display for MitigationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MitigationPolicy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MitigationPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| SimError::Config(format!("unknown mitigation policy `{s}` (none|trim|extend|migrate|full)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Reactive,
    Proactive,
}

impl Trigger {
    pub fn as_str(self) -> &'static str {
        match self {
            Trigger::Reactive => "reactive",
            Trigger::Proactive => "proactive",
        }
    }
}

impl FromStr for Trigger {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reactive" => Ok(Trigger::Reactive),
            "proactive" => Ok(Trigger::Proactive),
            _ => Err(SimError::Config(format!("unknown trigger `{s}` (reactive|proactive)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mitigation: MitigationPolicy,
    pub trigger: Trigger,
    pub contention: ContentionConfig,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mitigation: MitigationPolicy::Full,
            trigger: Trigger::Proactive,
            contention: ContentionConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MitigationKind {
    Trim,
    Extend,
    Migrate,
}

impl MitigationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MitigationKind::Trim => "trim",
            MitigationKind::Extend => "extend",
            MitigationKind::Migrate => "migrate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MitigationEvent {
    /// Seconds since the epoch, at monitor resolution.
    pub time: f64,
    pub server_id: String,
    pub kind: MitigationKind,
    pub trigger: Trigger,
    /// GB trimmed, added to the pool, or copied by the migration.
    pub amount_gb: f64,
    /// Duration of the operation itself.
    pub latency_secs: f64,
    /// When the freed memory becomes usable; later than `time + latency`
    /// when the operation queued behind an earlier one.
    pub completes_at: f64,
    pub vm_id: Option<String>,
    pub destination: Option<String>,
}

/// A contiguous stretch of unmet memory demand on one server.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Episode {
    pub server_id: String,
    pub start: f64,
    pub end: f64,
}

impl Episode {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockedMigration {
    pub time: f64,
    pub server_id: String,
    pub vm_id: String,
}

/// Memory pool state of one server at the end of a monitor period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimelineRow {
    pub time: f64,
    pub server_id: String,
    pub pool_gb: f64,
    pub backed_gb: f64,
    pub free_gb: f64,
    pub unmet_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowdownSummary {
    /// Per-VM worst slowdown factor.
    pub per_vm_max: Option<Distribution>,
    /// Per-VM time-weighted mean slowdown factor.
    pub per_vm_mean: Option<Distribution>,
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub policy: String,
    pub mitigation: MitigationPolicy,
    pub trigger: Trigger,
    pub seed: u64,
    pub contention: ContentionConfig,
    pub trace_fingerprint: String,
    pub simulated_secs: f64,
    /// Server-seconds with at least one VM.
    pub server_active_secs: f64,
    pub violation_secs: ResourceVector,
    pub violation_share_pct: ResourceVector,
    pub cpu_trigger_steps: usize,
    pub memory_episodes: Vec<Episode>,
    pub episode_duration_secs: Option<Distribution>,
    pub mitigations: Vec<MitigationEvent>,
    pub blocked_migrations: Vec<BlockedMigration>,
    pub redirected_arrivals: usize,
    pub dropped_arrivals: usize,
    pub slowdown: SlowdownSummary,
    pub allocation_error: AllocationErrorReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<TimelineRow>,
}

impl SimReport {
    pub fn mitigation_count(&self, kind: MitigationKind) -> usize {
        self.mitigations.iter().filter(|m| m.kind == kind).count()
    }

    pub fn latency_of(&self, kind: MitigationKind) -> Option<Distribution> {
        let v: Vec<f64> = self.mitigations.iter().filter(|m| m.kind == kind).map(|m| m.latency_secs).collect();
        Distribution::of(&v)
    }

    pub fn memory_violation_secs(&self) -> f64 {
        self.violation_secs.mem
    }
}

/// Cold pages of a VM: a fixed share of what it has backed beyond `keep`.
pub fn cold_pages(backed: f64, keep: f64, cold_fraction: f64) -> f64 {
    cold_fraction * (backed - keep).max(0.0)
}

/// Migration candidate with the largest pool draw per GB to copy, lowest
/// index on ties. Candidates are `(pool draw, footprint)`.
pub fn choose_migration(candidates: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &(draw, footprint)) in candidates.iter().enumerate() {
        if draw <= EPS || footprint <= EPS {
            continue;
        }
        let score = draw / footprint;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, i));
        }
    }
    best.map(|(_, i)| i)
}

#[derive(Debug, Clone)]
struct VmRt {
    idx: usize,
    id: String,
    alloc: HybridAllocation,
    pa: f64,
    req_mem: f64,
    demand: f64,
    draw: f64,
    backed: f64,
    trimming: f64,
    unmet: f64,
    ewma: Ewma,
    horizon: HorizonPredictor,
    slow_time: f64,
    slow_integral: f64,
    slow_max: f64,
}

impl VmRt {
    fn util_pct(&self) -> f64 {
        if self.req_mem > 0.0 {
            self.demand / self.req_mem * 100.0
        } else {
            0.0
        }
    }

    fn set_demand(&mut self, util_pct: f64) {
        self.demand = util_pct / 100.0 * self.req_mem;
        self.draw = (self.demand - self.pa).max(0.0);
    }
}

#[derive(Debug, Clone)]
enum PendingKind {
    Trim(Vec<(usize, f64)>),
    Extend(f64),
    Migrate { vm: usize, dest: usize },
}

#[derive(Debug, Clone)]
struct Pending {
    at: f64,
    kind: PendingKind,
}

#[derive(Debug, Clone)]
struct MigRequest {
    vm: usize,
    time: f64,
    trigger: Trigger,
}

#[derive(Debug, Clone)]
struct ServerRt {
    server_id: String,
    vms: Vec<VmRt>,
    pending: Vec<Pending>,
    pending_ext_gb: f64,
    trim_free_at: f64,
    extend_free_at: f64,
    migrating: Option<usize>,
    request: Option<MigRequest>,
    blocked: bool,
    outbox: Vec<(VmRt, usize)>,
    rng: ChaCha8Rng,
    violation_since: Option<f64>,
    episodes: Vec<Episode>,
    events: Vec<MitigationEvent>,
    timeline: Vec<TimelineRow>,
    violation_secs: [f64; 4],
    active_secs: f64,
    cpu_trigger_steps: usize,
    finished: Vec<(f64, f64)>,
    invariant: Option<(f64, String)>,
}

/// Per-run knobs the server loop reads.
#[derive(Clone, Copy)]
struct Ctx {
    mitigation: MitigationPolicy,
    trigger: Trigger,
    c: ContentionConfig,
    mem_g: f64,
}

impl ServerRt {
    fn new(server_id: String, seed: u64, idx: usize) -> Self {
        ServerRt {
            server_id,
            vms: Vec::new(),
            pending: Vec::new(),
            pending_ext_gb: 0.0,
            trim_free_at: f64::NEG_INFINITY,
            extend_free_at: f64::NEG_INFINITY,
            migrating: None,
            request: None,
            blocked: false,
            outbox: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            violation_since: None,
            episodes: Vec::new(),
            events: Vec::new(),
            timeline: Vec::new(),
            violation_secs: [0.0; 4],
            active_secs: 0.0,
            cpu_trigger_steps: 0,
            finished: Vec::new(),
            invariant: None,
        }
    }

    fn usable_pool(&self, state: &ServerState, mem_g: f64) -> f64 {
        state.pool_units(Resource::Mem) as f64 * mem_g - self.pending_ext_gb
    }

    fn backed(&self) -> f64 {
        self.vms.iter().map(|v| v.backed).sum()
    }

    fn free(&self, state: &ServerState, mem_g: f64) -> f64 {
        (self.usable_pool(state, mem_g) - self.backed()).max(0.0)
    }

    fn push_pending(&mut self, p: Pending) {
        let pos = self.pending.partition_point(|q| q.at <= p.at);
        self.pending.insert(pos, p);
    }

    fn finish_vm(&mut self, vm: &VmRt) {
        let mean = if vm.slow_time > 0.0 { vm.slow_integral / vm.slow_time } else { 1.0 };
        self.finished.push((vm.slow_max.max(1.0), mean));
    }

    /// Keeps backed pages within the pool after it shrank: first absorb the
    /// shortfall as extension, then page out, stale pages first.
    fn rebalance(&mut self, state: &mut ServerState, mem_g: f64) {
        let short = self.backed() - self.usable_pool(state, mem_g);
        if short <= EPS {
            return;
        }
        state.extend_pool(crate::hybrid::units_ceil(short, mem_g));
        let mut short = self.backed() - self.usable_pool(state, mem_g);
        for stale_only in [true, false] {
            for vm in &mut self.vms {
                if short <= EPS {
                    return;
                }
                let avail = if stale_only { (vm.backed - vm.draw).max(0.0) } else { vm.backed };
                let take = avail.min(short);
                vm.backed -= take;
                vm.trimming = vm.trimming.min(vm.backed);
                short -= take;
            }
        }
    }

    /// Removes a VM that departs; cancels its migration if one is running.
    fn depart(&mut self, vm_idx: usize, states: &mut [ServerState], me: usize, mem_g: f64) -> Result<(), HybridError> {
        let Some(pos) = self.vms.iter().position(|v| v.idx == vm_idx) else { return Ok(()) };
        let vm = self.vms.remove(pos);
        if self.migrating == Some(vm_idx) {
            self.migrating = None;
            if let Some(p) =
                self.pending.iter().position(|p| matches!(p.kind, PendingKind::Migrate { vm, .. } if vm == vm_idx))
            {
                if let PendingKind::Migrate { dest, .. } = self.pending.remove(p).kind {
                    states[dest].remove(&vm.id)?;
                }
            }
        }
        if self.request.as_ref().is_some_and(|r| r.vm == vm_idx) {
            self.request = None;
        }
        states[me].remove(&vm.id)?;
        self.finish_vm(&vm);
        self.rebalance(&mut states[me], mem_g);
        Ok(())
    }

    fn apply(&mut self, p: Pending, state: &mut ServerState, mem_g: f64) -> Result<(), HybridError> {
        match p.kind {
            PendingKind::Trim(parts) => {
                for (idx, amt) in parts {
                    if let Some(vm) = self.vms.iter_mut().find(|v| v.idx == idx) {
                        let take = amt.min(vm.trimming).min(vm.backed).max(0.0);
                        vm.backed -= take;
                        vm.trimming = (vm.trimming - amt).max(0.0);
                    }
                }
            }
            PendingKind::Extend(gb) => self.pending_ext_gb = (self.pending_ext_gb - gb).max(0.0),
            PendingKind::Migrate { vm, dest } => {
                self.migrating = None;
                if let Some(pos) = self.vms.iter().position(|v| v.idx == vm) {
                    let mut v = self.vms.remove(pos);
                    state.remove(&v.id)?;
                    v.backed = 0.0;
                    v.trimming = 0.0;
                    v.unmet = 0.0;
                    self.outbox.push((v, dest));
                    self.rebalance(state, mem_g);
                }
            }
        }
        Ok(())
    }

    /// Hands free pool pages to VMs whose draw exceeds what they hold.
    fn grow(&mut self, state: &ServerState, mem_g: f64) {
        let mut free = self.free(state, mem_g);
        let mut needy: Vec<usize> =
            (0..self.vms.len()).filter(|&i| self.vms[i].draw > self.vms[i].backed + EPS).collect();
        if needy.len() > 1 {
            needy.shuffle(&mut self.rng);
        }
        for i in needy {
            let vm = &mut self.vms[i];
            let take = (vm.draw - vm.backed).min(free).max(0.0);
            vm.backed += take;
            free -= take;
        }
        for vm in &mut self.vms {
            vm.unmet = (vm.draw - vm.backed).max(0.0);
        }
    }

    /// Accounts demand-side contention of one 5-minute step for the fungible
    /// resources.
    fn account_step(&mut self, state: &ServerState, cpu: f64, net: f64, ssd: f64, c: &ContentionConfig) {
        if self.vms.is_empty() {
            return;
        }
        let step = STEP_SECS as f64;
        self.active_secs += step;
        let cap = state.capacity;
        if cpu > c.cpu_threshold * cap.cpu + EPS {
            self.violation_secs[Resource::Cpu.index()] += step;
        }
        if cpu > 0.0 && cap.cpu > 0.0 {
            let wait = (cpu - cap.cpu).max(0.0) / cpu;
            if wait > c.cpu_wait_trigger && cpu / cap.cpu > c.cpu_util_trigger {
                self.cpu_trigger_steps += 1;
            }
        }
        if net > cap.net + EPS {
            self.violation_secs[Resource::Net.index()] += step;
        }
        if ssd > cap.ssd + EPS {
            self.violation_secs[Resource::Ssd.index()] += step;
        }
    }

    /// One monitor period `[t0, t0 + 20s)`.
    fn tick(&mut self, state: &mut ServerState, t0: f64, ctx: &Ctx) -> Result<(), HybridError> {
        if self.vms.is_empty() && self.pending.is_empty() {
            self.close_episode(t0);
            return Ok(());
        }
        let end = t0 + MONITOR_SECS as f64;
        let mut tau = t0;
        loop {
            while self.pending.first().is_some_and(|p| p.at <= tau + EPS) {
                let p = self.pending.remove(0);
                self.apply(p, state, ctx.mem_g)?;
            }
            self.grow(state, ctx.mem_g);
            let next = self.pending.first().map_or(end, |p| p.at.min(end));
            let len = next - tau;
            let unmet: f64 = self.vms.iter().map(|v| v.unmet).sum();
            if unmet > EPS {
                self.violation_secs[Resource::Mem.index()] += len;
                self.violation_since.get_or_insert(tau);
            } else {
                self.close_episode(tau);
            }
            for vm in &mut self.vms {
                let s = if vm.demand > EPS { 1.0 + ctx.c.slowdown_penalty * vm.unmet / vm.demand } else { 1.0 };
                vm.slow_integral += s * len;
                vm.slow_time += len;
                vm.slow_max = vm.slow_max.max(s);
            }
            if ctx.c.check_invariants && self.invariant.is_none() {
                let (b, p) = (self.backed(), self.usable_pool(state, ctx.mem_g));
                if b > p + 1e-6 {
                    self.invariant = Some((tau, format!("{}: backed {b} GB exceeds pool {p} GB", self.server_id)));
                } else if let Err(e) = state.check_invariants() {
                    self.invariant = Some((tau, e));
                }
            }
            tau = next;
            if tau >= end - EPS {
                break;
            }
        }
        self.monitor(state, end, ctx);
        if ctx.c.record_timeline && !self.vms.is_empty() {
            let pool = self.usable_pool(state, ctx.mem_g);
            let backed = self.backed();
            self.timeline.push(TimelineRow {
                time: end,
                server_id: self.server_id.clone(),
                pool_gb: pool,
                backed_gb: backed,
                free_gb: (pool - backed).max(0.0),
                unmet_gb: self.vms.iter().map(|v| v.unmet).sum(),
            });
        }
        Ok(())
    }

    fn close_episode(&mut self, at: f64) {
        if let Some(start) = self.violation_since.take() {
            self.episodes.push(Episode { server_id: self.server_id.clone(), start, end: at });
        }
    }

    fn in_flight_relief(&self) -> f64 {
        let mut relief = self.pending_ext_gb;
        for p in &self.pending {
            if let PendingKind::Trim(parts) = &p.kind {
                relief += parts.iter().map(|(_, a)| a).sum::<f64>();
            }
        }
        if let Some(m) = self.migrating.or(self.request.as_ref().map(|r| r.vm)) {
            if let Some(vm) = self.vms.iter().find(|v| v.idx == m) {
                relief += vm.draw;
            }
        }
        relief
    }

    /// Monitor at the end of a period: update predictors, detect or
    /// anticipate a pool shortfall and escalate mitigation.
    fn monitor(&mut self, state: &mut ServerState, now: f64, ctx: &Ctx) {
        for vm in &mut self.vms {
            let u = vm.util_pct();
            vm.ewma.update(u);
        }
        let relief = self.in_flight_relief();
        let unmet: f64 = self.vms.iter().map(|v| v.unmet).sum();
        let reactive = unmet - relief;

        let now_ts = now.round() as Timestamp;
        let keep: Vec<f64> = self
            .vms
            .iter()
            .map(|vm| {
                if ctx.trigger == Trigger::Reactive {
                    return vm.draw;
                }
                match vm.horizon.predict(now_ts).value() {
                    Some(h) => {
                        let pct = h.max(vm.ewma.predict().unwrap_or(0.0));
                        (pct / 100.0 * vm.req_mem - vm.pa).max(0.0).max(vm.draw)
                    }
                    None => vm.draw,
                }
            })
            .collect();
        let proactive = if ctx.trigger == Trigger::Proactive {
            let want: f64 = self.vms.iter().zip(&keep).map(|(v, k)| (k - v.backed).max(0.0)).sum();
            want - self.free(state, ctx.mem_g) - relief
        } else {
            f64::NEG_INFINITY
        };

        let need = reactive.max(proactive);
        if need <= 1e-6 {
            self.blocked = false;
            return;
        }
        let trigger = if reactive > 1e-6 { Trigger::Reactive } else { Trigger::Proactive };
        self.escalate(need, now, trigger, &keep, state, ctx);
    }

    fn escalate(
        &mut self,
        mut need: f64,
        now: f64,
        trigger: Trigger,
        keep: &[f64],
        state: &mut ServerState,
        ctx: &Ctx,
    ) {
        let c = &ctx.c;
        // Shortfall that trimming can never cover, even over many passes.
        let mut beyond_trim = need;
        if ctx.mitigation.trims() {
            let stale: Vec<f64> = self
                .vms
                .iter()
                .zip(keep)
                .map(|(v, &k)| if self.migrating == Some(v.idx) { 0.0 } else { (v.backed - v.trimming - k).max(0.0) })
                .collect();
            // A pass reclaims the cold share of each VM's stale pages, and at
            // least a small remainder so trimming finishes.
            let cold: Vec<f64> =
                stale.iter().map(|&st| cold_pages(st, 0.0, c.cold_fraction).max(st.min(TRIM_FLOOR_GB))).collect();
            let total: f64 = cold.iter().sum();
            let amount = need.min(total);
            if amount > 1e-6 {
                let mut parts = Vec::new();
                for (vm, &cv) in self.vms.iter_mut().zip(&cold) {
                    if cv > 0.0 {
                        let take = cv * amount / total;
                        vm.trimming += take;
                        parts.push((vm.idx, take));
                    }
                }
                let latency = c.trim_latency(amount);
                let at = now.max(self.trim_free_at) + latency;
                self.trim_free_at = at;
                self.push_pending(Pending { at, kind: PendingKind::Trim(parts) });
                self.events.push(MitigationEvent {
                    time: now,
                    server_id: self.server_id.clone(),
                    kind: MitigationKind::Trim,
                    trigger,
                    amount_gb: amount,
                    latency_secs: latency,
                    completes_at: at,
                    vm_id: None,
                    destination: None,
                });
                need -= amount;
            }
            beyond_trim -= stale.iter().sum::<f64>();
        }
        // Extension is cheap: it covers whatever this pass did not.
        if need > 1e-6 && ctx.mitigation.extends() {
            let units = crate::hybrid::units_ceil(need, ctx.mem_g);
            let granted = state.extend_pool(units);
            if granted > 0 {
                let gb = granted as f64 * ctx.mem_g;
                let latency = c.extend_latency(gb);
                let at = now.max(self.extend_free_at) + latency;
                self.extend_free_at = at;
                self.pending_ext_gb += gb;
                self.push_pending(Pending { at, kind: PendingKind::Extend(gb) });
                self.events.push(MitigationEvent {
                    time: now,
                    server_id: self.server_id.clone(),
                    kind: MitigationKind::Extend,
                    trigger,
                    amount_gb: gb,
                    latency_secs: latency,
                    completes_at: at,
                    vm_id: None,
                    destination: None,
                });
                beyond_trim -= gb;
            }
        }
        // Migration is the last resort, for what trimming never reclaims.
        let need = beyond_trim;
        if need > 1e-6
            && ctx.mitigation.migrates()
            && self.migrating.is_none()
            && self.request.is_none()
            && !self.blocked
        {
            let cands: Vec<(f64, f64)> = self.vms.iter().zip(keep).map(|(v, &k)| (k, v.pa + v.backed)).collect();
            if let Some(i) = choose_migration(&cands) {
                self.request = Some(MigRequest { vm: self.vms[i].idx, time: now, trigger });
            }
        }
    }
}

/// The VM's allocation with its memory VA raised to cover `draw_gb`, for
/// re-admission on a migration destination.
fn upgraded_allocation(alloc: &HybridAllocation, draw_gb: f64) -> HybridAllocation {
    let g = *alloc.granularity();
    let req = Resource::ALL.map(|r| alloc.requested_units(r));
    let guar = Resource::ALL.map(|r| alloc.guaranteed_units(r));
    let mut va = Resource::ALL.map(|r| alloc.va_units(r).to_vec());
    let m = Resource::Mem.index();
    let need = g.units_ceil(Resource::Mem, draw_gb).min(req[m] - guar[m]);
    for v in &mut va[m] {
        *v = (*v).max(need);
    }
    HybridAllocation::from_units(g, req, guar, va).unwrap_or_else(|_| alloc.clone())
}

struct Sim<'a> {
    trace: &'a TraceSet,
    ctx: Ctx,
    states: Vec<ServerState>,
    rts: Vec<ServerRt>,
    location: HashMap<usize, usize>,
    blocked: Vec<BlockedMigration>,
    redirected: usize,
    dropped: usize,
}

impl Sim<'_> {
    fn set_step_demand(&mut self, ts: Timestamp) {
        let trace = self.trace;
        self.rts.par_iter_mut().zip(self.states.par_iter()).for_each(|(rt, state)| {
            let (mut cpu, mut net, mut ssd) = (0.0, 0.0, 0.0);
            for vm in &mut rt.vms {
                let idx = vm.idx;
                let at = |r: Resource| trace.series(idx, r).value_at(ts).unwrap_or(0.0);
                vm.set_demand(at(Resource::Mem));
                let req = &trace.vms()[idx].requested;
                cpu += at(Resource::Cpu) / 100.0 * req.cpu;
                net += at(Resource::Net) / 100.0 * req.net;
                ssd += at(Resource::Ssd) / 100.0 * req.ssd;
            }
            rt.account_step(state, cpu, net, ssd, &self.ctx.c);
        });
    }

    fn new_vm(&self, idx: usize, alloc: HybridAllocation) -> VmRt {
        let vm = &self.trace.vms()[idx];
        let g = alloc.granularity().get(Resource::Mem);
        VmRt {
            idx,
            id: vm.vm_id.clone(),
            pa: alloc.guaranteed_units(Resource::Mem) as f64 * g,
            req_mem: vm.requested.mem,
            alloc,
            demand: 0.0,
            draw: 0.0,
            backed: 0.0,
            trimming: 0.0,
            unmet: 0.0,
            ewma: Ewma::new(self.ctx.c.ewma_alpha),
            horizon: HorizonPredictor::new(self.ctx.c.horizon_window_hours),
            slow_time: 0.0,
            slow_integral: 0.0,
            slow_max: 1.0,
        }
    }

    fn arrive(&mut self, idx: usize, server: usize, alloc: HybridAllocation) -> Result<(), HybridError> {
        let id = self.trace.vms()[idx].vm_id.clone();
        let mem_g = self.ctx.mem_g;
        let mut target = None;
        if self.states[server].fit_check(&alloc)?.fits {
            target = Some(server);
        } else if self.states[server].extension_units() > 0 {
            // Hand idle extension back before looking elsewhere.
            let free_units = crate::hybrid::units_floor(self.rts[server].free(&self.states[server], mem_g), mem_g);
            self.states[server].shrink_extension(free_units);
            if self.states[server].fit_check(&alloc)?.fits {
                target = Some(server);
            }
        }
        if target.is_none() {
            target = best_fit_among(&self.states, &alloc, None)?;
            self.redirected += target.is_some() as usize;
        }
        let Some(s) = target else {
            self.dropped += 1;
            return Ok(());
        };
        self.states[s].place(&id, alloc.clone())?;
        let rt = self.new_vm(idx, alloc);
        self.rts[s].vms.push(rt);
        self.location.insert(idx, s);
        Ok(())
    }

    fn depart(&mut self, idx: usize) -> Result<(), HybridError> {
        if let Some(s) = self.location.remove(&idx) {
            self.rts[s].depart(idx, &mut self.states, s, self.ctx.mem_g)?;
        }
        Ok(())
    }

    /// Sequential point between monitor periods: start requested migrations
    /// and hand migrated VMs to their destinations.
    fn barrier(&mut self, ts: Timestamp) -> Result<(), HybridError> {
        for s in 0..self.rts.len() {
            let Some(req) = self.rts[s].request.take() else { continue };
            let Some(pos) = self.rts[s].vms.iter().position(|v| v.idx == req.vm) else { continue };
            let vm = &self.rts[s].vms[pos];
            let alloc = upgraded_allocation(&vm.alloc, vm.draw);
            let footprint = vm.pa + vm.backed;
            let id = vm.id.clone();
            match best_fit_among(&self.states, &alloc, Some(s))? {
                Some(dest) => {
                    self.states[dest].place(&id, alloc.clone())?;
                    let c = &self.ctx.c;
                    let latency = c.migration_latency(footprint);
                    let at = req.time + latency;
                    let rt = &mut self.rts[s];
                    rt.vms[pos].alloc = alloc;
                    rt.migrating = Some(req.vm);
                    rt.push_pending(Pending { at, kind: PendingKind::Migrate { vm: req.vm, dest } });
                    rt.events.push(MitigationEvent {
                        time: req.time,
                        server_id: rt.server_id.clone(),
                        kind: MitigationKind::Migrate,
                        trigger: req.trigger,
                        amount_gb: footprint,
                        latency_secs: latency,
                        completes_at: at,
                        vm_id: Some(id),
                        destination: Some(self.states[dest].server_id.clone()),
                    });
                }
                None => {
                    self.rts[s].blocked = true;
                    self.blocked.push(BlockedMigration {
                        time: req.time,
                        server_id: self.rts[s].server_id.clone(),
                        vm_id: id,
                    });
                }
            }
        }
        for s in 0..self.rts.len() {
            for (mut vm, dest) in std::mem::take(&mut self.rts[s].outbox) {
                vm.set_demand(self.trace.series(vm.idx, Resource::Mem).value_at(ts).unwrap_or(0.0));
                self.location.insert(vm.idx, dest);
                self.rts[dest].vms.push(vm);
            }
        }
        Ok(())
    }
}

/// Replays `log` against the utilization in `trace` with the given
/// mitigation policy and trigger.
pub fn run_simulation(log: &PlacementLog, trace: &TraceSet, cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.contention.validate()?;
    let fp = inputs_fingerprint(trace, &log.fleet);
    if fp != log.trace_fingerprint {
        return Err(SimError::Mismatch(format!("log fingerprint {} vs trace {fp}", log.trace_fingerprint)));
    }
    let mut states: Vec<ServerState> = log
        .fleet
        .iter()
        .map(|s| ServerState::new(s, log.windows(), log.config.granularity, log.config.backing_ratio))
        .collect();
    states.sort_by(|a, b| a.server_id.cmp(&b.server_id));
    let index: HashMap<&str, usize> = states.iter().enumerate().map(|(i, s)| (s.server_id.as_str(), i)).collect();
    let rts = states.iter().enumerate().map(|(i, s)| ServerRt::new(s.server_id.clone(), cfg.seed, i)).collect();

    let mut arrivals: Vec<(Timestamp, usize, usize, &HybridAllocation)> = Vec::with_capacity(log.placements.len());
    for p in &log.placements {
        let vm = trace.vms().get(p.vm_index).ok_or_else(|| SimError::Mismatch(format!("vm index {}", p.vm_index)))?;
        let s =
            *index.get(p.server_id.as_str()).ok_or_else(|| SimError::Mismatch(format!("server {}", p.server_id)))?;
        for r in Resource::ALL {
            let series = trace.series(p.vm_index, r);
            if series.start > vm.start || series.end() < vm.end {
                return Err(SimError::MissingSeries { vm_id: vm.vm_id.clone(), resource: r });
            }
        }
        arrivals.push((vm.start, p.vm_index, s, &p.allocation));
    }
    arrivals.sort_by_key(|a| (a.0, a.1));
    let mut departures: Vec<(Timestamp, usize)> = arrivals.iter().map(|a| (trace.vms()[a.1].end, a.1)).collect();
    departures.sort_unstable();

    let mut sim = Sim {
        trace,
        ctx: Ctx {
            mitigation: cfg.mitigation,
            trigger: cfg.trigger,
            c: cfg.contention,
            mem_g: log.config.granularity.get(Resource::Mem),
        },
        states,
        rts,
        location: HashMap::new(),
        blocked: Vec::new(),
        redirected: 0,
        dropped: 0,
    };

    let (begin, end) = match (arrivals.first(), departures.last()) {
        (Some(a), Some(d)) => (a.0.div_euclid(STEP_SECS) * STEP_SECS, d.0),
        _ => (0, 0),
    };
    let (mut ai, mut di) = (0, 0);
    let mut ts = begin;
    while ts < end {
        while di < departures.len() && departures[di].0 <= ts {
            sim.depart(departures[di].1)?;
            di += 1;
        }
        while ai < arrivals.len() && arrivals[ai].0 <= ts {
            let (_, idx, s, alloc) = arrivals[ai];
            sim.arrive(idx, s, alloc.clone())?;
            ai += 1;
        }
        sim.set_step_demand(ts);
        for k in 0..TICKS_PER_STEP {
            let t0 = (ts + k * MONITOR_SECS) as f64;
            let ctx = sim.ctx;
            sim.rts
                .par_iter_mut()
                .zip(sim.states.par_iter_mut())
                .try_for_each(|(rt, state)| rt.tick(state, t0, &ctx))?;
            if let Some((time, reason)) = sim.rts.iter().find_map(|rt| rt.invariant.clone()) {
                return Err(SimError::Invariant { time, reason });
            }
            sim.barrier(ts)?;
        }
        let trace = sim.trace;
        sim.rts.par_iter_mut().for_each(|rt| {
            for vm in &mut rt.vms {
                let u = trace.series(vm.idx, Resource::Mem).value_at(ts).unwrap_or(0.0);
                vm.horizon.observe(ts, u, u);
            }
        });
        ts += STEP_SECS;
    }
    for rt in &mut sim.rts {
        rt.close_episode(end as f64);
        for vm in std::mem::take(&mut rt.vms) {
            rt.finish_vm(&vm);
        }
    }
    Ok(build_report(log, trace, cfg, sim, (end - begin) as f64))
}

fn build_report(log: &PlacementLog, trace: &TraceSet, cfg: &SimConfig, sim: Sim<'_>, simulated_secs: f64) -> SimReport {
    let mut violation = [0.0; 4];
    let mut active = 0.0;
    let mut cpu_trigger_steps = 0;
    let mut episodes = Vec::new();
    let mut events = Vec::new();
    let mut timeline = Vec::new();
    let mut finished = Vec::new();
    for rt in sim.rts {
        for (v, x) in violation.iter_mut().zip(rt.violation_secs) {
            *v += x;
        }
        active += rt.active_secs;
        cpu_trigger_steps += rt.cpu_trigger_steps;
        episodes.extend(rt.episodes);
        events.extend(rt.events);
        timeline.extend(rt.timeline);
        finished.extend(rt.finished);
    }
    episodes.sort_by(|a, b| a.start.total_cmp(&b.start).then_with(|| a.server_id.cmp(&b.server_id)));
    events.sort_by(|a, b| {
        a.time.total_cmp(&b.time).then_with(|| a.server_id.cmp(&b.server_id)).then_with(|| a.kind.cmp(&b.kind))
    });
    timeline.sort_by(|a, b| a.time.total_cmp(&b.time).then_with(|| a.server_id.cmp(&b.server_id)));
    let violation_secs = ResourceVector::new(violation[0], violation[1], violation[2], violation[3]);
    let durations: Vec<f64> = episodes.iter().map(Episode::duration).collect();
    let maxes: Vec<f64> = finished.iter().map(|f| f.0).collect();
    let means: Vec<f64> = finished.iter().map(|f| f.1).collect();
    SimReport {
        schema_version: REPORT_SCHEMA_VERSION,
        policy: log.policy.label(),
        mitigation: cfg.mitigation,
        trigger: cfg.trigger,
        seed: cfg.seed,
        contention: cfg.contention,
        trace_fingerprint: log.trace_fingerprint.clone(),
        simulated_secs,
        server_active_secs: active,
        violation_share_pct: violation_secs.map(|_, v| if active > 0.0 { v / active * 100.0 } else { 0.0 }),
        violation_secs,
        cpu_trigger_steps,
        episode_duration_secs: Distribution::of(&durations),
        memory_episodes: episodes,
        mitigations: events,
        blocked_migrations: sim.blocked,
        redirected_arrivals: sim.redirected,
        dropped_arrivals: sim.dropped,
        slowdown: SlowdownSummary {
            per_vm_max: Distribution::of(&maxes),
            per_vm_mean: Distribution::of(&means),
            worst: maxes.iter().copied().fold(1.0, f64::max),
        },
        allocation_error: allocation_error(log, trace),
        timeline,
    }
}

#[cfg(test)]
mod tests;
