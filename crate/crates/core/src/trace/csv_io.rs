//! CSV interchange for traces: `vms.csv`, `util.csv` and `servers.csv`.
//!
//! Parsers take any reader plus a label used in error messages, so they can
//! be driven from files, memory or a fuzzer. They never panic on malformed
//! input and never allocate proportionally to a claimed VM lifetime.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use super::{Server, TraceError, TraceSet, UtilizationSeries, VmRecord, STEP_SECS};
use crate::resource::{Resource, ResourceVector};

pub const VMS_HEADER: [&str; 10] = [
    "vm_id",
    "subscription_id",
    "vm_config",
    "cpu_cores",
    "mem_gb",
    "net_gbps",
    "ssd_gb",
    "start_unix",
    "end_unix",
    "offering",
];
pub const UTIL_HEADER: [&str; 4] = ["vm_id", "resource", "timestamp_unix", "max_util_pct"];
pub const SERVERS_HEADER: [&str; 6] = ["server_id", "cluster_id", "cpu_cores", "mem_gb", "net_gbps", "ssd_gb"];

struct Rows<R: Read> {
    label: String,
    reader: csv::Reader<R>,
}

impl<R: Read> Rows<R> {
    fn open(reader: R, label: &str, header: &[&str]) -> Result<Self, TraceError> {
        let mut reader = ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
        let found = reader.headers().map_err(|e| csv_error(label, &e))?.clone();
        let matches = found.len() == header.len() && found.iter().zip(header).all(|(a, b)| a.trim() == *b);
        if !matches {
            return Err(TraceError::Malformed {
                file: label.to_string(),
                line: 1,
                field: "header".into(),
                reason: format!(
                    "expected `{}`, found `{}`",
                    header.join(","),
                    found.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        Ok(Rows { label: label.to_string(), reader })
    }

    /// Calls `f` for every data row with its 1-based line number.
    fn for_each(
        &mut self,
        width: usize,
        mut f: impl FnMut(&Row<'_>) -> Result<(), TraceError>,
    ) -> Result<(), TraceError> {
        let mut record = StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {}
                Err(e) => return Err(csv_error(&self.label, &e)),
            }
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != width {
                return Err(TraceError::Malformed {
                    file: self.label.clone(),
                    line,
                    field: "row".into(),
                    reason: format!("expected {width} fields, found {}", record.len()),
                });
            }
            f(&Row { label: &self.label, line, record: &record })?;
        }
    }
}

fn csv_error(label: &str, e: &csv::Error) -> TraceError {
    TraceError::Malformed {
        file: label.to_string(),
        line: e.position().map(|p| p.line()).unwrap_or(0),
        field: "row".into(),
        reason: e.to_string(),
    }
}

struct Row<'a> {
    label: &'a str,
    line: u64,
    record: &'a StringRecord,
}

impl Row<'_> {
    fn err(&self, field: &str, reason: impl Into<String>) -> TraceError {
        TraceError::Malformed {
            file: self.label.to_string(),
            line: self.line,
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    fn str(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("").trim()
    }

    fn id(&self, idx: usize, field: &str) -> Result<String, TraceError> {
        let s = self.str(idx);
        if s.is_empty() {
            return Err(self.err(field, "empty"));
        }
        Ok(s.to_string())
    }

    fn amount(&self, idx: usize, field: &str) -> Result<f64, TraceError> {
        let v: f64 =
            self.str(idx).parse().map_err(|_| self.err(field, format!("not a number: `{}`", self.str(idx))))?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.err(field, format!("must be finite and non-negative, got {v}")));
        }
        Ok(v)
    }

    fn timestamp(&self, idx: usize, field: &str) -> Result<i64, TraceError> {
        let v: i64 = self
            .str(idx)
            .parse()
            .map_err(|_| self.err(field, format!("not an integer timestamp: `{}`", self.str(idx))))?;
        if v % STEP_SECS != 0 {
            return Err(self.err(field, format!("{v} is not a multiple of {STEP_SECS}")));
        }
        Ok(v)
    }
}

pub fn parse_vms<R: Read>(reader: R, label: &str) -> Result<Vec<VmRecord>, TraceError> {
    let mut rows = Rows::open(reader, label, &VMS_HEADER)?;
    let mut vms = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    rows.for_each(VMS_HEADER.len(), |row| {
        let vm = VmRecord {
            vm_id: row.id(0, "vm_id")?,
            subscription_id: row.id(1, "subscription_id")?,
            vm_config: row.id(2, "vm_config")?,
            requested: ResourceVector::new(
                row.amount(3, "cpu_cores")?,
                row.amount(4, "mem_gb")?,
                row.amount(5, "net_gbps")?,
                row.amount(6, "ssd_gb")?,
            ),
            start: row.timestamp(7, "start_unix")?,
            end: row.timestamp(8, "end_unix")?,
            offering: row.str(9).parse().map_err(|e: String| row.err("offering", e))?,
        };
        if vm.end <= vm.start {
            return Err(row.err("end_unix", format!("end {} is not after start {}", vm.end, vm.start)));
        }
        if vm.requested.cpu <= 0.0 {
            return Err(row.err("cpu_cores", "must be positive"));
        }
        if vm.requested.mem <= 0.0 {
            return Err(row.err("mem_gb", "must be positive"));
        }
        if let Some(first) = seen.insert(vm.vm_id.clone(), row.line) {
            return Err(row.err("vm_id", format!("duplicate of line {first}")));
        }
        vms.push(vm);
        Ok(())
    })?;
    Ok(vms)
}

pub fn parse_servers<R: Read>(reader: R, label: &str) -> Result<Vec<Server>, TraceError> {
    let mut rows = Rows::open(reader, label, &SERVERS_HEADER)?;
    let mut servers = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    rows.for_each(SERVERS_HEADER.len(), |row| {
        let server = Server {
            server_id: row.id(0, "server_id")?,
            cluster_id: row.id(1, "cluster_id")?,
            capacity: ResourceVector::new(
                row.amount(2, "cpu_cores")?,
                row.amount(3, "mem_gb")?,
                row.amount(4, "net_gbps")?,
                row.amount(5, "ssd_gb")?,
            ),
        };
        if let Some(first) = seen.insert(server.server_id.clone(), row.line) {
            return Err(row.err("server_id", format!("duplicate of line {first}")));
        }
        servers.push(server);
        Ok(())
    })?;
    Ok(servers)
}

/// Parses `util.csv` against already-parsed VM records. Rows may appear in
/// any order; every VM must end up with a gap-free series per resource.
pub fn parse_util<R: Read>(
    reader: R,
    label: &str,
    vms: &[VmRecord],
) -> Result<Vec<[UtilizationSeries; 4]>, TraceError> {
    let index: HashMap<&str, usize> = vms.iter().enumerate().map(|(i, v)| (v.vm_id.as_str(), i)).collect();
    // (step index, value, line) per vm x resource
    let mut raw: Vec<[Vec<(u64, f32, u64)>; 4]> = (0..vms.len()).map(|_| Default::default()).collect();
    let mut rows = Rows::open(reader, label, &UTIL_HEADER)?;
    rows.for_each(UTIL_HEADER.len(), |row| {
        let vm_id = row.str(0);
        let &vm_idx = index.get(vm_id).ok_or_else(|| row.err("vm_id", format!("unknown vm `{vm_id}`")))?;
        let resource: Resource =
            row.str(1).parse().map_err(|e: crate::resource::UnknownResource| row.err("resource", e.to_string()))?;
        let ts = row.timestamp(2, "timestamp_unix")?;
        let vm = &vms[vm_idx];
        if !vm.is_active_at(ts) {
            return Err(row
                .err("timestamp_unix", format!("{ts} outside the lifetime [{}, {}) of vm {vm_id}", vm.start, vm.end)));
        }
        let value: f32 =
            row.str(3).parse().map_err(|_| row.err("max_util_pct", format!("not a number: `{}`", row.str(3))))?;
        if !(0.0..=100.0).contains(&value) {
            return Err(row.err("max_util_pct", format!("utilization out of [0,100]: {}", row.str(3))));
        }
        let step = ((ts as i128 - vm.start as i128) / STEP_SECS as i128) as u64;
        raw[vm_idx][resource.index()].push((step, value, row.line));
        Ok(())
    })?;

    let mut out = Vec::with_capacity(vms.len());
    for (vm, per_resource) in vms.iter().zip(raw) {
        let expected = vm.num_steps() as u64;
        let mut group: Vec<UtilizationSeries> = Vec::with_capacity(4);
        for (resource, mut samples) in Resource::ALL.into_iter().zip(per_resource) {
            samples.sort_by_key(|s| (s.0, s.2));
            let mut values = Vec::with_capacity(samples.len());
            for (pos, &(step, value, line)) in samples.iter().enumerate() {
                let pos = pos as u64;
                if step < pos {
                    return Err(TraceError::Malformed {
                        file: label.to_string(),
                        line,
                        field: "timestamp_unix".into(),
                        reason: format!("duplicate {resource} sample for vm {}", vm.vm_id),
                    });
                }
                if step > pos {
                    return Err(gap(vm, resource, pos));
                }
                values.push(value);
            }
            if (values.len() as u64) < expected {
                return Err(gap(vm, resource, values.len() as u64));
            }
            group.push(UtilizationSeries::new(vm.vm_id.clone(), resource, vm.start, values));
        }
        let group: [UtilizationSeries; 4] = group.try_into().expect("four resources");
        out.push(group);
    }
    Ok(out)
}

fn gap(vm: &VmRecord, resource: Resource, step: u64) -> TraceError {
    TraceError::SeriesGap { vm_id: vm.vm_id.clone(), resource, timestamp: vm.start + step as i64 * STEP_SECS }
}

pub fn parse_trace_from_readers(
    vms: impl Read,
    vms_label: &str,
    util: impl Read,
    util_label: &str,
    servers: impl Read,
    servers_label: &str,
) -> Result<TraceSet, TraceError> {
    let vms = parse_vms(vms, vms_label)?;
    let series = parse_util(util, util_label, &vms)?;
    let servers = parse_servers(servers, servers_label)?;
    TraceSet::new(vms, series, servers)
}

pub fn parse_trace(vm_file: &Path, util_file: &Path, server_file: &Path) -> Result<TraceSet, TraceError> {
    let open =
        |p: &Path| File::open(p).map(BufReader::new).map_err(|source| TraceError::Io { file: p.to_path_buf(), source });
    parse_trace_from_readers(
        open(vm_file)?,
        &vm_file.display().to_string(),
        open(util_file)?,
        &util_file.display().to_string(),
        open(server_file)?,
        &server_file.display().to_string(),
    )
}

fn io_err(file: &str) -> impl Fn(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io { file: file.into(), source }
}

fn csv_write_err(file: &str) -> impl Fn(csv::Error) -> TraceError + '_ {
    move |e| TraceError::Io { file: file.into(), source: std::io::Error::other(e.to_string()) }
}

pub fn write_vms<W: Write>(w: W, vms: &[VmRecord]) -> Result<(), TraceError> {
    let mut out = WriterBuilder::new().from_writer(w);
    let e = csv_write_err("vms.csv");
    out.write_record(VMS_HEADER).map_err(&e)?;
    for vm in vms {
        out.write_record([
            vm.vm_id.clone(),
            vm.subscription_id.clone(),
            vm.vm_config.clone(),
            vm.requested.cpu.to_string(),
            vm.requested.mem.to_string(),
            vm.requested.net.to_string(),
            vm.requested.ssd.to_string(),
            vm.start.to_string(),
            vm.end.to_string(),
            vm.offering.to_string(),
        ])
        .map_err(&e)?;
    }
    out.flush().map_err(io_err("vms.csv"))
}

pub fn write_util<W: Write>(w: W, trace: &TraceSet) -> Result<(), TraceError> {
    let mut out = WriterBuilder::new().from_writer(w);
    let e = csv_write_err("util.csv");
    out.write_record(UTIL_HEADER).map_err(&e)?;
    for i in 0..trace.len() {
        for s in trace.series_of(i) {
            for (ts, v) in s.values.iter().enumerate().map(|(k, v)| (s.start + k as i64 * STEP_SECS, v)) {
                out.write_record([s.vm_id.as_str(), s.resource.as_str(), &ts.to_string(), &v.to_string()])
                    .map_err(&e)?;
            }
        }
    }
    out.flush().map_err(io_err("util.csv"))
}

pub fn write_servers<W: Write>(w: W, servers: &[Server]) -> Result<(), TraceError> {
    let mut out = WriterBuilder::new().from_writer(w);
    let e = csv_write_err("servers.csv");
    out.write_record(SERVERS_HEADER).map_err(&e)?;
    for s in servers {
        out.write_record([
            s.server_id.clone(),
            s.cluster_id.clone(),
            s.capacity.cpu.to_string(),
            s.capacity.mem.to_string(),
            s.capacity.net.to_string(),
            s.capacity.ssd.to_string(),
        ])
        .map_err(&e)?;
    }
    out.flush().map_err(io_err("servers.csv"))
}

/// Writes `vms.csv`, `util.csv` and `servers.csv` into `dir`.
pub fn write_trace(dir: &Path, trace: &TraceSet) -> Result<(), TraceError> {
    std::fs::create_dir_all(dir).map_err(|source| TraceError::Io { file: dir.to_path_buf(), source })?;
    let create = |name: &str| {
        let p = dir.join(name);
        File::create(&p).map(BufWriter::new).map_err(|source| TraceError::Io { file: p, source })
    };
    write_vms(create("vms.csv")?, trace.vms())?;
    write_util(create("util.csv")?, trace)?;
    write_servers(create("servers.csv")?, trace.servers())
}
