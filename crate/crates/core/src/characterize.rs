//! Trace characterization: resource-hours, stranding and bottlenecks,
//! peaks/valleys, day-over-day consistency and time-window savings.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::resource::{Resource, ResourceVector};
use crate::trace::{window_maxima, windows_per_day, Timestamp, TraceSet, UtilizationSeries, STEPS_PER_DAY};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CharacterizeError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("window length {0}h does not divide a day")]
    WindowHours(u32),
    #[error("timestamp {ts} outside the trace range [{start}, {end})")]
    OutOfRange { ts: Timestamp, start: Timestamp, end: Timestamp },
    #[error("fill shape must be positive in cpu and mem, got {0:?}")]
    FillShape(ResourceVector),
    #[error("vm {vm_id} is assigned to unknown server {server_id}")]
    UnknownServer { vm_id: String, server_id: String },
    #[error("vm {0} in the assignment is not in the trace")]
    UnknownVm(String),
}

// ---------------------------------------------------------------------------
// Resource-hours

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoursDimension {
    /// VMs lasting strictly longer than the threshold (hours).
    Duration,
    /// VMs with at least the threshold in cores.
    Cores,
    /// VMs with at least the threshold in GB of memory.
    Memory,
}

impl HoursDimension {
    pub fn default_thresholds(self) -> &'static [f64] {
        match self {
            HoursDimension::Duration => &[0.0, 1.0, 6.0, 24.0, 72.0, 168.0],
            HoursDimension::Cores => &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            HoursDimension::Memory => &[4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HoursDimension::Duration => "duration_hours",
            HoursDimension::Cores => "cores",
            HoursDimension::Memory => "mem_gb",
        }
    }
}

/// One allocation for resource-hours accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationSpan {
    pub duration_secs: f64,
    pub cores: f64,
    pub mem_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceHoursRow {
    pub dimension: HoursDimension,
    pub threshold: f64,
    pub core_hours_pct: f64,
    pub gb_hours_pct: f64,
    pub vm_count_pct: f64,
}

/// Share of core-hours, GB-hours and VM count held by the allocations
/// selected by each threshold.
pub fn resource_hours_of(
    spans: &[AllocationSpan],
    dimension: HoursDimension,
    thresholds: &[f64],
) -> Vec<ResourceHoursRow> {
    let core_h = |s: &AllocationSpan| s.cores * s.duration_secs / 3600.0;
    let gb_h = |s: &AllocationSpan| s.mem_gb * s.duration_secs / 3600.0;
    let total_core: f64 = spans.iter().map(core_h).sum();
    let total_gb: f64 = spans.iter().map(gb_h).sum();
    let pct = |x: f64, t: f64| if t > 0.0 { x / t * 100.0 } else { 0.0 };
    thresholds
        .iter()
        .map(|&thr| {
            let sel: Vec<&AllocationSpan> = spans
                .iter()
                .filter(|s| match dimension {
                    HoursDimension::Duration => s.duration_secs > thr * 3600.0,
                    HoursDimension::Cores => s.cores >= thr,
                    HoursDimension::Memory => s.mem_gb >= thr,
                })
                .collect();
            ResourceHoursRow {
                dimension,
                threshold: thr,
                core_hours_pct: pct(sel.iter().map(|s| core_h(s)).sum(), total_core),
                gb_hours_pct: pct(sel.iter().map(|s| gb_h(s)).sum(), total_gb),
                vm_count_pct: pct(sel.len() as f64, spans.len() as f64),
            }
        })
        .collect()
}

pub fn resource_hours(trace: &TraceSet, dimension: HoursDimension) -> Result<Vec<ResourceHoursRow>, CharacterizeError> {
    if trace.is_empty() {
        return Err(CharacterizeError::EmptyTrace);
    }
    let spans: Vec<AllocationSpan> = trace
        .vms()
        .iter()
        .map(|v| AllocationSpan {
            duration_secs: v.duration_secs() as f64,
            cores: v.requested.cpu,
            mem_gb: v.requested.mem,
        })
        .collect();
    Ok(resource_hours_of(&spans, dimension, dimension.default_thresholds()))
}

// ---------------------------------------------------------------------------
// Stranding

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OversubMode {
    None,
    CpuOnly,
    CpuMem,
}

/// Outcome of filling one server at one timestamp with whole fill-shape
/// units. The three percentage vectors sum to 100 for every resource with
/// non-zero capacity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FillOutcome {
    pub placements: u64,
    /// Capacity in use (allocated minus any reclaimed unused amount).
    pub allocated_pct: ResourceVector,
    pub placed_pct: ResourceVector,
    pub stranded_pct: ResourceVector,
    pub bottleneck: Option<Resource>,
}

const FILL_EPS: f64 = 1e-9;

/// Repeatedly subtracts `fill` from `free` while it fits.
pub fn fill_server(capacity: &ResourceVector, free: &ResourceVector, fill: &ResourceVector) -> FillOutcome {
    let free = free.map(|r, v| v.clamp(0.0, capacity[r]));
    let placements = Resource::ALL
        .iter()
        .filter(|&&r| fill[r] > 0.0)
        .map(|&r| ((free[r] / fill[r]) + FILL_EPS).floor().max(0.0) as u64)
        .min()
        .unwrap_or(0);
    let placed = fill.scale(placements as f64);
    let remainder = free.map(|r, v| (v - placed[r]).max(0.0));

    let blocking: Vec<Resource> =
        Resource::ALL.into_iter().filter(|&r| fill[r] > 0.0 && remainder[r] < fill[r] - FILL_EPS * fill[r]).collect();
    // Every fill resource used up exactly: nothing is stranded behind a
    // bottleneck.
    let aligned = Resource::ALL.iter().all(|&r| fill[r] <= 0.0 || remainder[r] <= FILL_EPS * fill[r].max(1.0));
    let bottleneck = if aligned {
        None
    } else {
        blocking.iter().copied().min_by(|&a, &b| (remainder[a] / fill[a]).total_cmp(&(remainder[b] / fill[b])))
    };

    let pct = |r: Resource, v: f64| if capacity[r] > 0.0 { v / capacity[r] * 100.0 } else { 0.0 };
    FillOutcome {
        placements,
        allocated_pct: ResourceVector::from_fn(|r| pct(r, capacity[r] - free[r])),
        placed_pct: ResourceVector::from_fn(|r| pct(r, placed[r])),
        stranded_pct: ResourceVector::from_fn(|r| pct(r, remainder[r])),
        bottleneck,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrandingRow {
    pub server_id: String,
    pub cluster_id: String,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub outcome: FillOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterStranding {
    pub cluster_id: String,
    pub samples: usize,
    pub mean_stranded_pct: ResourceVector,
    /// Percent of server-timestamps blocked by each resource.
    pub bottleneck_share_pct: ResourceVector,
    pub no_bottleneck_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrandingReport {
    pub mode: OversubMode,
    pub fill_shape: ResourceVector,
    pub rows: Vec<StrandingRow>,
    pub clusters: Vec<ClusterStranding>,
}

/// Fills every server at every timestamp with hypothetical `fill_shape`
/// VMs. `assignment` maps vm_id to the server hosting it.
pub fn compute_stranding(
    trace: &TraceSet,
    assignment: &HashMap<String, String>,
    fill_shape: ResourceVector,
    mode: OversubMode,
    timestamps: &[Timestamp],
) -> Result<StrandingReport, CharacterizeError> {
    if !(fill_shape.cpu > 0.0 && fill_shape.mem > 0.0) || !fill_shape.is_nonnegative() || !fill_shape.is_finite() {
        return Err(CharacterizeError::FillShape(fill_shape));
    }
    let (start, end) = trace.time_range().ok_or(CharacterizeError::EmptyTrace)?;
    if let Some(&ts) = timestamps.iter().find(|&&ts| ts < start || ts >= end) {
        return Err(CharacterizeError::OutOfRange { ts, start, end });
    }
    let server_idx: HashMap<&str, usize> =
        trace.servers().iter().enumerate().map(|(i, s)| (s.server_id.as_str(), i)).collect();
    let mut hosted: Vec<Vec<usize>> = vec![Vec::new(); trace.servers().len()];
    let mut sorted: Vec<(&String, &String)> = assignment.iter().collect();
    sorted.sort();
    for (vm_id, server_id) in sorted {
        let vi = trace.vm_index(vm_id).ok_or_else(|| CharacterizeError::UnknownVm(vm_id.clone()))?;
        let si = *server_idx
            .get(server_id.as_str())
            .ok_or_else(|| CharacterizeError::UnknownServer { vm_id: vm_id.clone(), server_id: server_id.clone() })?;
        hosted[si].push(vi);
    }

    let jobs: Vec<(usize, Timestamp)> =
        (0..trace.servers().len()).flat_map(|s| timestamps.iter().map(move |&t| (s, t))).collect();
    let rows: Vec<StrandingRow> = jobs
        .par_iter()
        .map(|&(si, ts)| {
            let server = &trace.servers()[si];
            let mut allocated = ResourceVector::ZERO;
            let mut unused = ResourceVector::ZERO;
            for &vi in &hosted[si] {
                let vm = &trace.vms()[vi];
                if !vm.is_active_at(ts) {
                    continue;
                }
                allocated += vm.requested;
                for r in [Resource::Cpu, Resource::Mem] {
                    let util = trace.series(vi, r).value_at(ts).unwrap_or(100.0);
                    unused[r] += vm.requested[r] * (1.0 - util / 100.0);
                }
            }
            let mut free = server.capacity - allocated;
            match mode {
                OversubMode::None => {}
                OversubMode::CpuOnly => free.cpu += unused.cpu,
                OversubMode::CpuMem => {
                    free.cpu += unused.cpu;
                    free.mem += unused.mem;
                }
            }
            StrandingRow {
                server_id: server.server_id.clone(),
                cluster_id: server.cluster_id.clone(),
                timestamp: ts,
                outcome: fill_server(&server.capacity, &free, &fill_shape),
            }
        })
        .collect();

    let mut by_cluster: BTreeMap<&str, Vec<&StrandingRow>> = BTreeMap::new();
    for row in &rows {
        by_cluster.entry(row.cluster_id.as_str()).or_default().push(row);
    }
    let clusters = by_cluster
        .into_iter()
        .map(|(cluster, rs)| {
            let n = rs.len() as f64;
            let mut mean = ResourceVector::ZERO;
            let mut share = ResourceVector::ZERO;
            let mut none = 0.0;
            for r in &rs {
                mean += r.outcome.stranded_pct;
                match r.outcome.bottleneck {
                    Some(b) => share[b] += 1.0,
                    None => none += 1.0,
                }
            }
            ClusterStranding {
                cluster_id: cluster.to_string(),
                samples: rs.len(),
                mean_stranded_pct: mean.scale(1.0 / n),
                bottleneck_share_pct: share.scale(100.0 / n),
                no_bottleneck_pct: none / n * 100.0,
            }
        })
        .collect();

    Ok(StrandingReport { mode, fill_shape, rows, clusters })
}

// ---------------------------------------------------------------------------
// Peaks and valleys

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakValleyDay {
    pub day: i64,
    pub window_max: Vec<f64>,
    /// 0-based window indices.
    pub peaks: Vec<usize>,
    pub valleys: Vec<usize>,
    pub none: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakValleyReport {
    pub vm_id: String,
    pub resource: Resource,
    pub window_hours: u32,
    pub days: Vec<PeakValleyDay>,
    pub skipped_partial_days: usize,
}

type DayMaxima = Vec<(i64, Vec<f64>)>;

/// Per-day maxima of every window, for days the series covers completely.
/// Returns the full days and the number of partial days skipped.
fn full_day_maxima(series: &UtilizationSeries, window_hours: u32) -> Result<(DayMaxima, usize), CharacterizeError> {
    let windows = windows_per_day(window_hours).ok_or(CharacterizeError::WindowHours(window_hours))?;
    let mut days: BTreeMap<i64, (usize, Vec<f64>)> = BTreeMap::new();
    for wm in window_maxima(series, window_hours) {
        let e = days.entry(wm.day).or_insert_with(|| (0, vec![0.0; windows]));
        e.0 += wm.samples;
        e.1[wm.window] = wm.max;
    }
    let mut full = Vec::new();
    let mut skipped = 0;
    for (day, (samples, maxima)) in days {
        if samples == STEPS_PER_DAY {
            full.push((day, maxima));
        } else {
            skipped += 1;
        }
    }
    Ok((full, skipped))
}

/// Classifies a day's window maxima. Ties are exact comparisons.
pub fn classify_day(window_max: &[f64], threshold_pct: f64) -> (Vec<usize>, Vec<usize>, bool) {
    let hi = window_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = window_max.iter().copied().fold(f64::INFINITY, f64::min);
    if window_max.is_empty() || hi - lo < threshold_pct {
        return (vec![], vec![], true);
    }
    let peaks = (0..window_max.len()).filter(|&i| window_max[i] == hi).collect();
    let valleys = (0..window_max.len()).filter(|&i| window_max[i] == lo).collect();
    (peaks, valleys, false)
}

pub fn detect_peaks_valleys(
    series: &UtilizationSeries,
    window_hours: u32,
    threshold_pct: f64,
) -> Result<PeakValleyReport, CharacterizeError> {
    let (full, skipped) = full_day_maxima(series, window_hours)?;
    let days = full
        .into_iter()
        .map(|(day, window_max)| {
            let (peaks, valleys, none) = classify_day(&window_max, threshold_pct);
            PeakValleyDay { day, window_max, peaks, valleys, none }
        })
        .collect();
    Ok(PeakValleyReport {
        vm_id: series.vm_id.clone(),
        resource: series.resource,
        window_hours,
        days,
        skipped_partial_days: skipped,
    })
}

/// Fleet-level peak placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakValleySummary {
    pub resource: Resource,
    pub window_hours: u32,
    pub vm_days: usize,
    pub none_days: usize,
    /// VM-days with a peak in each window.
    pub peak_counts: Vec<usize>,
    /// `peak_counts` over VM-days that had any peak, in percent. A multi-peak
    /// day counts once per peak window, so this can sum past 100.
    pub peak_pct_of_peaking_days: Vec<f64>,
    pub none_pct: f64,
    pub skipped_partial_days: usize,
}

pub fn summarize_peaks(reports: &[PeakValleyReport], resource: Resource, window_hours: u32) -> PeakValleySummary {
    let windows = windows_per_day(window_hours).unwrap_or(1);
    let mut s = PeakValleySummary {
        resource,
        window_hours,
        vm_days: 0,
        none_days: 0,
        peak_counts: vec![0; windows],
        peak_pct_of_peaking_days: vec![0.0; windows],
        none_pct: 0.0,
        skipped_partial_days: 0,
    };
    for rep in reports.iter().filter(|r| r.resource == resource && r.window_hours == window_hours) {
        s.skipped_partial_days += rep.skipped_partial_days;
        for d in &rep.days {
            s.vm_days += 1;
            s.none_days += d.none as usize;
            for &p in &d.peaks {
                s.peak_counts[p] += 1;
            }
        }
    }
    let peaking = (s.vm_days - s.none_days) as f64;
    if peaking > 0.0 {
        s.peak_pct_of_peaking_days = s.peak_counts.iter().map(|&c| c as f64 / peaking * 100.0).collect();
    }
    if s.vm_days > 0 {
        s.none_pct = s.none_days as f64 / s.vm_days as f64 * 100.0;
    }
    s
}

// ---------------------------------------------------------------------------
// Day-over-day consistency

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DayOverDay {
    pub vm_id: String,
    pub resource: Resource,
    /// |max_t(d) - max_t(d+1)| for every window t and consecutive full days.
    pub window_diffs: Vec<f64>,
    /// Daily peak (max over windows) differences.
    pub peak_diffs: Vec<f64>,
    /// Daily valley (min over windows) differences.
    pub valley_diffs: Vec<f64>,
}

impl DayOverDay {
    pub fn mean_window_diff(&self) -> Option<f64> {
        mean(&self.window_diffs)
    }

    pub fn max_window_diff(&self) -> Option<f64> {
        self.window_diffs.iter().copied().reduce(f64::max)
    }
}

pub fn day_over_day_consistency(
    series: &UtilizationSeries,
    window_hours: u32,
) -> Result<DayOverDay, CharacterizeError> {
    let (full, _) = full_day_maxima(series, window_hours)?;
    let mut out = DayOverDay {
        vm_id: series.vm_id.clone(),
        resource: series.resource,
        window_diffs: vec![],
        peak_diffs: vec![],
        valley_diffs: vec![],
    };
    for pair in full.windows(2) {
        let ((d0, a), (d1, b)) = (&pair[0], &pair[1]);
        if d1 - d0 != 1 {
            continue;
        }
        out.window_diffs.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
        let peak = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let valley = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        out.peak_diffs.push((peak(a) - peak(b)).abs());
        out.valley_diffs.push((valley(a) - valley(b)).abs());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Time-window savings

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSaving {
    pub day: i64,
    pub window: usize,
    pub window_max: f64,
    pub saving: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsReport {
    pub vm_id: String,
    pub resource: Resource,
    pub window_hours: u32,
    pub lifetime_max: f64,
    pub windows: Vec<WindowSaving>,
    /// Saving averaged over samples, so windows cut short by the VM's start
    /// or end weigh in proportion to their length.
    pub mean_saving: f64,
}

/// Per window instance, the lifetime maximum minus the window maximum.
pub fn window_savings(series: &UtilizationSeries, window_hours: u32) -> Result<SavingsReport, CharacterizeError> {
    windows_per_day(window_hours).ok_or(CharacterizeError::WindowHours(window_hours))?;
    let lifetime_max = series.max();
    let windows: Vec<WindowSaving> = window_maxima(series, window_hours)
        .into_iter()
        .map(|wm| WindowSaving {
            day: wm.day,
            window: wm.window,
            window_max: wm.max,
            saving: lifetime_max - wm.max,
            samples: wm.samples,
        })
        .collect();
    let n: usize = windows.iter().map(|w| w.samples).sum();
    let mean_saving =
        if n == 0 { 0.0 } else { windows.iter().map(|w| w.saving * w.samples as f64).sum::<f64>() / n as f64 };
    Ok(SavingsReport {
        vm_id: series.vm_id.clone(),
        resource: series.resource,
        window_hours,
        lifetime_max,
        windows,
        mean_saving,
    })
}

/// Min, quartiles and max of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Distribution {
    /// Nearest-rank quantiles. `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Distribution> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Distribution {
            count: v.len(),
            min: v[0],
            p25: q(0.25),
            median: q(0.5),
            p75: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

/// Empirical CDF points `(value, fraction <= value)`.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.into_iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = (i + 1) as f64 / n,
            _ => out.push((x, (i + 1) as f64 / n)),
        }
    }
    out
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-resource savings distribution across a trace for one window length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsSummary {
    pub resource: Resource,
    pub window_hours: u32,
    pub per_vm_mean_saving: Distribution,
}

/// Runs `window_savings` on every VM and resource in parallel; results are
/// in trace order.
pub fn trace_savings(trace: &TraceSet, window_hours: u32) -> Result<Vec<SavingsReport>, CharacterizeError> {
    windows_per_day(window_hours).ok_or(CharacterizeError::WindowHours(window_hours))?;
    (0..trace.len())
        .into_par_iter()
        .flat_map_iter(|i| Resource::ALL.into_iter().map(move |r| (i, r)))
        .map(|(i, r)| window_savings(trace.series(i, r), window_hours))
        .collect()
}

pub fn summarize_savings(reports: &[SavingsReport]) -> Vec<SavingsSummary> {
    let mut groups: BTreeMap<(u32, Resource), Vec<f64>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.window_hours, r.resource)).or_default().push(r.mean_saving);
    }
    groups
        .into_iter()
        .filter_map(|((window_hours, resource), v)| {
            Distribution::of(&v).map(|per_vm_mean_saving| SavingsSummary { resource, window_hours, per_vm_mean_saving })
        })
        .collect()
}

/// UTC day boundaries fully covered by the trace range, for picking
/// stranding timestamps.
pub fn sample_timestamps(trace: &TraceSet, every_secs: i64) -> Vec<Timestamp> {
    let Some((start, end)) = trace.time_range() else { return vec![] };
    let step = every_secs.max(crate::trace::STEP_SECS);
    let first = start.div_euclid(step) * step;
    let first = if first < start { first + step } else { first };
    (0..).map(|k| first + k * step).take_while(|&t| t < end).collect()
}
