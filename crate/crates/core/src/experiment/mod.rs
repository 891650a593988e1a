//! End-to-end experiment driver: config, stages, outputs and manifest.

mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    CharacterizeSettings, ExperimentConfig, PlacementSettings, PolicySpec, PredictionSettings, SimulationSettings,
    TraceSource,
};
pub use manifest::{
    read_manifest, sha256_hex, verify_manifest, Discrepancy, Manifest, ManifestEntry, ManifestError, OutputDir,
    RunStatus, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
};

use crate::characterize::{
    compute_stranding, detect_peaks_valleys, resource_hours, sample_timestamps, summarize_peaks, summarize_savings,
    trace_savings, CharacterizeError, ClusterStranding, HoursDimension, OversubMode, PeakValleySummary,
    ResourceHoursRow, SavingsSummary,
};
use crate::predict::{train_group_model, GroupModel, PredictError};
use crate::report::{emit_report, write_episodes_csv, write_mitigations_csv, write_summary_csv, write_timeline_csv};
use crate::report::{ReportError, Summary};
use crate::resource::{Resource, ResourceVector};
use crate::scheduler::{schedule, PlacementConfig, PlacementLog, PolicyKind, ScheduleError};
use crate::simulate::{run_simulation, SimConfig, SimError, SimReport};
use crate::trace::{generate_synthetic_trace, parse_trace, write_trace, GenConfig, TraceError, TraceSet, DAY_SECS};

pub const CHARACTERIZATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preflight,
    Trace,
    Characterize,
    Predict,
    Schedule,
    Simulate,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Preflight => "preflight",
            Stage::Trace => "trace",
            Stage::Characterize => "characterize",
            Stage::Predict => "predict",
            Stage::Schedule => "schedule",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Characterize(#[from] CharacterizeError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Simulate(#[from] SimError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("writing outputs: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: StageError,
    },
}

/// Coarse error category, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Internal => 4,
        }
    }
}

impl StageError {
    pub fn class(&self) -> ErrorClass {
        match self {
            StageError::Trace(TraceError::Config(_)) => ErrorClass::Config,
            StageError::Trace(_) | StageError::Characterize(_) | StageError::Io(_) => ErrorClass::Data,
            StageError::Predict(_) => ErrorClass::Config,
            StageError::Schedule(ScheduleError::Hybrid(_)) => ErrorClass::Internal,
            StageError::Schedule(ScheduleError::Io(_)) => ErrorClass::Data,
            StageError::Schedule(_) => ErrorClass::Config,
            StageError::Simulate(SimError::Config(_)) => ErrorClass::Config,
            StageError::Simulate(SimError::Mismatch(_) | SimError::MissingSeries { .. }) => ErrorClass::Data,
            StageError::Simulate(_) => ErrorClass::Internal,
            StageError::Report(ReportError::Io(_) | ReportError::Csv(_)) => ErrorClass::Data,
            StageError::Report(_) => ErrorClass::Internal,
        }
    }
}

impl ExperimentError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ExperimentError::Config(_) => ErrorClass::Config,
            ExperimentError::Stage { source, .. } => source.class(),
        }
    }
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> ExperimentError {
    move |e| ExperimentError::Stage { stage, source: e.into() }
}

/// Loads or generates the trace. Generated traces use `seed`.
pub fn load_trace(source: &TraceSource, seed: u64) -> Result<TraceSet, TraceError> {
    if let Some(dir) = &source.dir {
        return parse_trace(&dir.join("vms.csv"), &dir.join("util.csv"), &dir.join("servers.csv"));
    }
    let cfg = match (&source.generator, &source.generate) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io { file: path.clone(), source: e })?;
            GenConfig::from_toml(&text)?
        }
        (None, Some(cfg)) => cfg.clone(),
        (None, None) => return Err(TraceError::Config("no trace source".into())),
    };
    generate_synthetic_trace(&cfg, seed)
}

/// History and evaluation parts of a trace: VMs starting in the first
/// `train_days` days, and the rest.
pub fn split_trace(trace: &TraceSet, train_days: u32) -> (TraceSet, TraceSet) {
    let Some((start, _)) = trace.time_range() else { return (trace.clone(), trace.clone()) };
    let cutoff = start.div_euclid(DAY_SECS) * DAY_SECS + train_days as i64 * DAY_SECS;
    (trace.filter(|v| v.start < cutoff), trace.filter(|v| v.start >= cutoff))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Characterization {
    pub schema_version: u32,
    pub vm_count: usize,
    pub server_count: usize,
    pub time_range: Option<(i64, i64)>,
    pub resource_hours: Vec<ResourceHoursRow>,
    pub savings: Vec<SavingsSummary>,
    pub peaks: Vec<PeakValleySummary>,
}

/// Resource-hours, window savings and peak placement of a whole trace.
pub fn characterize_trace(
    trace: &TraceSet,
    opts: &CharacterizeSettings,
) -> Result<Characterization, CharacterizeError> {
    let mut out = Characterization {
        schema_version: CHARACTERIZATION_SCHEMA_VERSION,
        vm_count: trace.len(),
        server_count: trace.servers().len(),
        time_range: trace.time_range(),
        resource_hours: Vec::new(),
        savings: Vec::new(),
        peaks: Vec::new(),
    };
    if trace.is_empty() {
        return Ok(out);
    }
    for d in [HoursDimension::Duration, HoursDimension::Cores, HoursDimension::Memory] {
        out.resource_hours.extend(resource_hours(trace, d)?);
    }
    for &h in &opts.window_hours {
        out.savings.extend(summarize_savings(&trace_savings(trace, h)?));
    }
    for r in [Resource::Cpu, Resource::Mem] {
        let reports = (0..trace.len())
            .into_par_iter()
            .map(|i| detect_peaks_valleys(trace.series(i, r), opts.peak_window_hours, opts.threshold_pct))
            .collect::<Result<Vec<_>, _>>()?;
        out.peaks.push(summarize_peaks(&reports, r, opts.peak_window_hours));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrandingSummary {
    pub policy: String,
    pub mode: OversubMode,
    pub fill_shape: ResourceVector,
    pub timestamps: usize,
    pub clusters: Vec<ClusterStranding>,
}

/// Stranding of the servers as `log` left them, sampled every
/// `opts.stranding_every_hours`.
pub fn stranding_of(
    trace: &TraceSet,
    log: &PlacementLog,
    opts: &CharacterizeSettings,
) -> Result<Vec<StrandingSummary>, CharacterizeError> {
    let assignment: HashMap<String, String> =
        log.placements.iter().map(|p| (trace.vms()[p.vm_index].vm_id.clone(), p.server_id.clone())).collect();
    let ts = sample_timestamps(trace, opts.stranding_every_hours as i64 * 3600);
    if ts.is_empty() {
        return Ok(Vec::new());
    }
    opts.stranding_modes
        .iter()
        .map(|&mode| {
            let r = compute_stranding(trace, &assignment, opts.fill_vector(), mode, &ts)?;
            Ok(StrandingSummary {
                policy: log.policy.label(),
                mode,
                fill_shape: r.fill_shape,
                timestamps: ts.len(),
                clusters: r.clusters,
            })
        })
        .collect()
}

/// Everything a finished run produced, besides the files.
#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub summary: Summary,
    pub logs: Vec<PlacementLog>,
    pub sims: Vec<SimReport>,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

fn csv_bytes<E>(f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<Vec<u8>, E> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Runs every stage and writes outputs plus `manifest.json` into
/// `cfg.output_dir`. Nothing is written when the config or its inputs are
/// invalid; a later failure leaves an `incomplete` manifest behind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate().map_err(ExperimentError::Config)?;
    cfg.preflight().map_err(ExperimentError::Config)?;
    let policies = cfg.resolved_policies().map_err(ExperimentError::Config)?;
    let mut out = OutputDir::create(&cfg.output_dir).map_err(at(Stage::Preflight))?;

    let mut fingerprint = None;
    let result = stages(cfg, &policies, &mut out, &mut fingerprint);
    let (status, failed_stage, error) = match &result {
        Ok(_) => (RunStatus::Complete, None, None),
        Err(ExperimentError::Stage { stage, source }) => {
            (RunStatus::Incomplete, Some(stage.to_string()), Some(source.to_string()))
        }
        Err(e) => (RunStatus::Incomplete, None, Some(e.to_string())),
    };
    let root = out.root().to_path_buf();
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        trace_fingerprint: fingerprint,
        status,
        failed_stage,
        error,
        files: out.into_files(),
    };
    std::fs::write(root.join(MANIFEST_FILE), json(&manifest)).map_err(at(Stage::Report))?;
    let (summary, logs, sims) = result?;
    Ok(RunOutcome { manifest, summary, logs, sims })
}

type StageOutput = (Summary, Vec<PlacementLog>, Vec<SimReport>);

fn stages(
    cfg: &ExperimentConfig,
    policies: &[crate::scheduler::Policy],
    out: &mut OutputDir,
    fingerprint: &mut Option<String>,
) -> Result<StageOutput, ExperimentError> {
    let trace = load_trace(&cfg.trace, cfg.seed).map_err(at(Stage::Trace))?;
    *fingerprint = Some(trace.fingerprint());
    if cfg.trace.save {
        write_trace(&out.root().join("trace"), &trace).map_err(at(Stage::Trace))?;
        for f in ["trace/vms.csv", "trace/util.csv", "trace/servers.csv"] {
            out.record(f).map_err(at(Stage::Trace))?;
        }
    }
    let (history, eval) = split_trace(&trace, cfg.prediction.train_days);

    if cfg.characterize.enabled {
        let c = characterize_trace(&trace, &cfg.characterize).map_err(at(Stage::Characterize))?;
        out.write("characterization.json", &json(&c)).map_err(at(Stage::Characterize))?;
    }

    // One model per window length in use.
    let mut models: BTreeMap<u32, GroupModel> = BTreeMap::new();
    for p in policies.iter().filter(|p| p.kind != PolicyKind::None) {
        if let std::collections::btree_map::Entry::Vacant(slot) = models.entry(p.window_hours) {
            slot.insert(
                train_group_model(&history, p.window_hours, cfg.prediction.min_group_size)
                    .map_err(at(Stage::Predict))?,
            );
        }
    }

    let placement = PlacementConfig { backing_ratio: cfg.placement.backing_ratio, ..Default::default() };
    let mut logs = Vec::with_capacity(policies.len());
    for p in policies {
        let model = models.get(&p.window_hours).map(|m| m as &dyn crate::predict::UtilizationPredictor);
        let log = schedule(&eval, model, p, eval.servers(), &placement).map_err(at(Stage::Schedule))?;
        let bytes = csv_bytes(|b| log.write_csv(b)).map_err(at(Stage::Schedule))?;
        out.write(&format!("placements/{}.csv", p.label()), &bytes).map_err(at(Stage::Schedule))?;
        logs.push(log);
    }
    if cfg.characterize.enabled && !eval.is_empty() {
        let mut stranding = Vec::new();
        for log in &logs {
            stranding.extend(stranding_of(&eval, log, &cfg.characterize).map_err(at(Stage::Characterize))?);
        }
        out.write("stranding.json", &json(&stranding)).map_err(at(Stage::Characterize))?;
    }

    let mut sims = Vec::new();
    let sim = &cfg.simulation;
    if sim.enabled {
        let selected =
            |k: PolicyKind| if sim.policies.is_empty() { k != PolicyKind::None } else { sim.policies.contains(&k) };
        for log in logs.iter().filter(|l| selected(l.policy.kind)) {
            for &mitigation in &sim.mitigations {
                for &trigger in &sim.triggers {
                    let sc = SimConfig { mitigation, trigger, contention: sim.contention, seed: cfg.seed };
                    let r = run_simulation(log, &eval, &sc).map_err(at(Stage::Simulate))?;
                    let dir = format!("simulations/{}-{}-{}", log.policy.label(), mitigation, trigger.as_str());
                    let w = |name: &str, bytes: Vec<u8>, out: &mut OutputDir| {
                        out.write(&format!("{dir}/{name}"), &bytes).map_err(at(Stage::Simulate))
                    };
                    w("report.json", json(&r), out)?;
                    w("episodes.csv", csv_bytes(|b| write_episodes_csv(&r, b)).map_err(at(Stage::Simulate))?, out)?;
                    w(
                        "mitigations.csv",
                        csv_bytes(|b| write_mitigations_csv(&r, b)).map_err(at(Stage::Simulate))?,
                        out,
                    )?;
                    if !r.timeline.is_empty() {
                        w("timeline.csv", csv_bytes(|b| write_timeline_csv(&r, b)).map_err(at(Stage::Simulate))?, out)?;
                    }
                    sims.push(r);
                }
            }
        }
    }

    let summary = emit_report(&logs, &sims).map_err(at(Stage::Report))?;
    out.write("summary.json", &json(&summary)).map_err(at(Stage::Report))?;
    let bytes = csv_bytes(|b| write_summary_csv(&summary, b)).map_err(at(Stage::Report))?;
    out.write("summary.csv", &bytes).map_err(at(Stage::Report))?;
    Ok((summary, logs, sims))
}

#[cfg(test)]
mod tests;
