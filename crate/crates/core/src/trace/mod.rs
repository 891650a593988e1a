//! Trace data model: VM records, their 5-minute max-utilization series and
//! the server fleet.

mod csv_io;
pub mod generate;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::resource::{Resource, ResourceVector};

pub use csv_io::{
    parse_servers, parse_trace, parse_trace_from_readers, parse_util, parse_vms, write_servers, write_trace,
    write_util, write_vms, SERVERS_HEADER, UTIL_HEADER, VMS_HEADER,
};
pub use generate::{generate_synthetic_trace, GenConfig};

/// Unix seconds.
pub type Timestamp = i64;

/// Telemetry sampling interval.
pub const STEP_SECS: i64 = 300;
pub const DAY_SECS: i64 = 86_400;
pub const STEPS_PER_DAY: usize = (DAY_SECS / STEP_SECS) as usize;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("{file}: {source}")]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: field `{field}`: {reason}")]
    Malformed { file: String, line: u64, field: String, reason: String },
    #[error("vm {vm_id}: {resource} series is missing the sample at {timestamp}")]
    SeriesGap { vm_id: String, resource: Resource, timestamp: Timestamp },
    #[error("vm {vm_id}: {reason}")]
    InvalidVm { vm_id: String, reason: String },
    #[error("invalid generator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Offering {
    Iaas,
    Paas,
}

impl Offering {
    pub fn as_str(self) -> &'static str {
        match self {
            Offering::Iaas => "iaas",
            Offering::Paas => "paas",
        }
    }
}

impl FromStr for Offering {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "iaas" => Ok(Offering::Iaas),
            "paas" => Ok(Offering::Paas),
            other => Err(format!("unknown offering `{other}` (expected iaas or paas)")),
        }
    }
}

impl fmt::Display for Offering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmRecord {
    pub vm_id: String,
    pub subscription_id: String,
    pub vm_config: String,
    pub requested: ResourceVector,
    pub start: Timestamp,
    pub end: Timestamp,
    pub offering: Offering,
}

impl VmRecord {
    /// Day of week of the allocation, 0 = Monday (UTC).
    pub fn weekday_of_allocation(&self) -> u8 {
        // 1970-01-01 was a Thursday.
        ((self.start.div_euclid(DAY_SECS) + 3).rem_euclid(7)) as u8
    }

    pub fn duration_secs(&self) -> i64 {
        self.end.saturating_sub(self.start)
    }

    pub fn num_steps(&self) -> usize {
        (self.duration_secs() / STEP_SECS).max(0) as usize
    }

    pub fn is_active_at(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.vm_id.is_empty() {
            return Err("empty vm_id".into());
        }
        if self.start % STEP_SECS != 0 || self.end % STEP_SECS != 0 {
            return Err("start/end not aligned to the 5-minute grid".into());
        }
        if self.end <= self.start {
            return Err(format!("end {} is not after start {}", self.end, self.start));
        }
        if !self.requested.is_finite() || !self.requested.is_nonnegative() {
            return Err("requested resources must be finite and non-negative".into());
        }
        if self.requested.cpu <= 0.0 || self.requested.mem <= 0.0 {
            return Err("requested cpu and mem must be positive".into());
        }
        Ok(())
    }
}

/// Max utilization per 5-minute interval, in percent of the VM's requested
/// amount, on a contiguous grid starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationSeries {
    pub vm_id: String,
    pub resource: Resource,
    pub start: Timestamp,
    pub values: Vec<f32>,
}

impl UtilizationSeries {
    pub fn new(vm_id: impl Into<String>, resource: Resource, start: Timestamp, values: Vec<f32>) -> Self {
        UtilizationSeries { vm_id: vm_id.into(), resource, start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exclusive end of the covered range.
    pub fn end(&self) -> Timestamp {
        self.start + self.values.len() as i64 * STEP_SECS
    }

    pub fn samples(&self) -> impl Iterator<Item = (Timestamp, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.start + i as i64 * STEP_SECS, v as f64))
    }

    /// Sample covering `ts`, if inside the series.
    pub fn value_at(&self, ts: Timestamp) -> Option<f64> {
        if ts < self.start {
            return None;
        }
        let idx = ((ts - self.start) / STEP_SECS) as usize;
        self.values.get(idx).map(|&v| v as f64)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub server_id: String,
    pub cluster_id: String,
    pub capacity: ResourceVector,
}

/// A validated, immutable trace. `series[i]` holds the four resource series
/// of `vms[i]` in [`Resource::ALL`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    vms: Vec<VmRecord>,
    series: Vec<[UtilizationSeries; 4]>,
    servers: Vec<Server>,
    index: HashMap<String, usize>,
}

impl TraceSet {
    pub fn new(
        vms: Vec<VmRecord>,
        series: Vec<[UtilizationSeries; 4]>,
        servers: Vec<Server>,
    ) -> Result<Self, TraceError> {
        if vms.len() != series.len() {
            return Err(TraceError::InvalidVm {
                vm_id: String::new(),
                reason: format!("{} VMs but {} series groups", vms.len(), series.len()),
            });
        }
        let mut index = HashMap::with_capacity(vms.len());
        for (i, (vm, group)) in vms.iter().zip(&series).enumerate() {
            vm.validate().map_err(|reason| TraceError::InvalidVm { vm_id: vm.vm_id.clone(), reason })?;
            if index.insert(vm.vm_id.clone(), i).is_some() {
                return Err(TraceError::InvalidVm { vm_id: vm.vm_id.clone(), reason: "duplicate vm_id".into() });
            }
            for (r, s) in Resource::ALL.iter().zip(group) {
                validate_series(vm, *r, s)?;
            }
        }
        let mut seen = std::collections::HashSet::new();
        for s in &servers {
            if !seen.insert(s.server_id.as_str()) {
                return Err(TraceError::InvalidVm {
                    vm_id: String::new(),
                    reason: format!("duplicate server_id {}", s.server_id),
                });
            }
            if !s.capacity.is_finite() || !s.capacity.is_nonnegative() {
                return Err(TraceError::InvalidVm {
                    vm_id: String::new(),
                    reason: format!("server {} has invalid capacity", s.server_id),
                });
            }
        }
        Ok(TraceSet { vms, series, servers, index })
    }

    pub fn vms(&self) -> &[VmRecord] {
        &self.vms
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn len(&self) -> usize {
        self.vms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vms.is_empty()
    }

    pub fn vm_index(&self, vm_id: &str) -> Option<usize> {
        self.index.get(vm_id).copied()
    }

    pub fn vm(&self, vm_id: &str) -> Option<&VmRecord> {
        self.vm_index(vm_id).map(|i| &self.vms[i])
    }

    pub fn series_of(&self, vm_idx: usize) -> &[UtilizationSeries; 4] {
        &self.series[vm_idx]
    }

    pub fn series(&self, vm_idx: usize, resource: Resource) -> &UtilizationSeries {
        &self.series[vm_idx][resource.index()]
    }

    /// Earliest VM start and latest VM end.
    pub fn time_range(&self) -> Option<(Timestamp, Timestamp)> {
        let start = self.vms.iter().map(|v| v.start).min()?;
        let end = self.vms.iter().map(|v| v.end).max()?;
        Some((start, end))
    }

    /// The VMs whose allocation starts inside `[from, to)`, with their series
    /// and the full server list.
    pub fn subset_by_start(&self, from: Timestamp, to: Timestamp) -> TraceSet {
        self.filter(|vm| vm.start >= from && vm.start < to)
    }

    pub fn filter(&self, mut keep: impl FnMut(&VmRecord) -> bool) -> TraceSet {
        let mut vms = Vec::new();
        let mut series = Vec::new();
        for (vm, s) in self.vms.iter().zip(&self.series) {
            if keep(vm) {
                vms.push(vm.clone());
                series.push(s.clone());
            }
        }
        let index = vms.iter().enumerate().map(|(i, v)| (v.vm_id.clone(), i)).collect();
        TraceSet { vms, series, servers: self.servers.clone(), index }
    }

    /// Stable content hash over VM records, series values and servers.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (vm, group) in self.vms.iter().zip(&self.series) {
            h.update(vm.vm_id.as_bytes());
            h.update([0]);
            h.update(vm.subscription_id.as_bytes());
            h.update([0]);
            h.update(vm.vm_config.as_bytes());
            h.update([0]);
            for (_, v) in vm.requested.iter() {
                h.update(v.to_le_bytes());
            }
            h.update(vm.start.to_le_bytes());
            h.update(vm.end.to_le_bytes());
            h.update(vm.offering.as_str().as_bytes());
            for s in group {
                for v in &s.values {
                    h.update(v.to_le_bytes());
                }
            }
        }
        for s in &self.servers {
            h.update(s.server_id.as_bytes());
            h.update([0]);
            h.update(s.cluster_id.as_bytes());
            h.update([0]);
            for (_, v) in s.capacity.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn validate_series(vm: &VmRecord, resource: Resource, s: &UtilizationSeries) -> Result<(), TraceError> {
    let invalid = |reason: String| TraceError::InvalidVm { vm_id: vm.vm_id.clone(), reason };
    if s.vm_id != vm.vm_id || s.resource != resource {
        return Err(invalid(format!("series for {}/{} stored under {}", s.vm_id, s.resource, resource)));
    }
    if s.start != vm.start {
        return Err(invalid(format!("{resource} series starts at {} instead of {}", s.start, vm.start)));
    }
    if s.values.len() < vm.num_steps() {
        return Err(TraceError::SeriesGap { vm_id: vm.vm_id.clone(), resource, timestamp: s.end() });
    }
    if s.values.len() > vm.num_steps() {
        return Err(invalid(format!("{resource} series extends past the VM end")));
    }
    if let Some(bad) = s.values.iter().find(|v| !(0.0..=100.0).contains(*v)) {
        return Err(invalid(format!("{resource} utilization {bad} out of [0,100]")));
    }
    Ok(())
}

/// UTC day index of a timestamp.
pub fn day_of(ts: Timestamp) -> i64 {
    ts.div_euclid(DAY_SECS)
}

/// Index of the daily time window containing `ts` for `window_hours`-long
/// windows aligned to UTC midnight.
pub fn window_of(ts: Timestamp, window_hours: u32) -> usize {
    (ts.rem_euclid(DAY_SECS) / (window_hours as i64 * 3600)) as usize
}

/// Maximum of one series over one daily window instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMax {
    pub day: i64,
    pub window: usize,
    pub max: f64,
    pub samples: usize,
}

/// Per-(day, window) maxima of a series in time order. Window instances cut
/// by the VM's start or end are included with fewer samples.
pub fn window_maxima(series: &UtilizationSeries, window_hours: u32) -> Vec<WindowMax> {
    let mut out: Vec<WindowMax> = Vec::new();
    for (ts, v) in series.samples() {
        let (day, window) = (day_of(ts), window_of(ts, window_hours));
        match out.last_mut() {
            Some(last) if last.day == day && last.window == window => {
                last.max = last.max.max(v);
                last.samples += 1;
            }
            _ => out.push(WindowMax { day, window, max: v, samples: 1 }),
        }
    }
    out
}

/// Valid window lengths: divisors of 24.
pub fn windows_per_day(window_hours: u32) -> Option<usize> {
    if window_hours == 0 || 24 % window_hours != 0 {
        None
    } else {
        Some((24 / window_hours) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn flat_vm(id: &str, start: Timestamp, steps: usize, util: f32) -> (VmRecord, [UtilizationSeries; 4]) {
        let vm = VmRecord {
            vm_id: id.into(),
            subscription_id: "sub".into(),
            vm_config: "D4".into(),
            requested: ResourceVector::new(4.0, 16.0, 2.0, 64.0),
            start,
            end: start + steps as i64 * STEP_SECS,
            offering: Offering::Iaas,
        };
        let series = Resource::ALL.map(|r| UtilizationSeries::new(id, r, start, vec![util; steps]));
        (vm, series)
    }

    #[test]
    fn weekday_is_monday_based() {
        // 2024-05-06 00:00 UTC was a Monday.
        let (mut vm, _) = flat_vm("a", 1_714_953_600, 1, 0.0);
        assert_eq!(vm.weekday_of_allocation(), 0);
        vm.start += 5 * DAY_SECS;
        assert_eq!(vm.weekday_of_allocation(), 5);
    }

    #[test]
    fn rejects_end_before_start() {
        let (mut vm, s) = flat_vm("a", 0, 2, 10.0);
        vm.end = vm.start;
        let err = TraceSet::new(vec![vm], vec![s], vec![]).unwrap_err();
        assert!(err.to_string().contains("not after start"), "{err}");
    }

    #[test]
    fn rejects_short_series_as_gap() {
        let (vm, mut s) = flat_vm("a", 0, 3, 10.0);
        s[1].values.pop();
        match TraceSet::new(vec![vm], vec![s], vec![]).unwrap_err() {
            TraceError::SeriesGap { vm_id, resource, timestamp } => {
                assert_eq!(vm_id, "a");
                assert_eq!(resource, Resource::Mem);
                assert_eq!(timestamp, 600);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn window_indexing() {
        assert_eq!(window_of(0, 8), 0);
        assert_eq!(window_of(8 * 3600, 8), 1);
        assert_eq!(window_of(DAY_SECS - 1, 8), 2);
        assert_eq!(window_of(DAY_SECS + 3600, 4), 0);
        assert_eq!(windows_per_day(5), None);
        assert_eq!(windows_per_day(4), Some(6));
    }

    #[test]
    fn fingerprint_changes_with_values() {
        let (vm, s) = flat_vm("a", 0, 3, 10.0);
        let t1 = TraceSet::new(vec![vm.clone()], vec![s.clone()], vec![]).unwrap();
        let mut s2 = s;
        s2[0].values[2] = 11.0;
        let t2 = TraceSet::new(vec![vm], vec![s2], vec![]).unwrap();
        assert_ne!(t1.fingerprint(), t2.fingerprint());
        assert_eq!(t1.fingerprint(), t1.clone().fingerprint());
    }
}
