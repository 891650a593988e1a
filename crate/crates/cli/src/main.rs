use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use oversub::experiment::{
    characterize_trace, load_trace, run_experiment, split_trace, stranding_of, verify_manifest, CharacterizeSettings,
    ErrorClass, ExperimentConfig, ExperimentError, OutputDir, StageError, TraceSource,
};
use oversub::predict::{train_group_model, GroupModel, Percentile, UtilizationPredictor};
use oversub::report::{emit_report, write_episodes_csv, write_mitigations_csv, write_summary_csv, write_timeline_csv};
use oversub::scheduler::{schedule, PlacementConfig, PlacementLog, Policy, PolicyKind};
use oversub::simulate::{run_simulation, ContentionConfig, MitigationPolicy, SimConfig, Trigger};
use oversub::trace::{write_trace, GenConfig, TraceSet};
use oversub::Resource;

const OUT_ENV: &str = "OVERSUB_OUT_DIR";

#[derive(Parser)]
#[command(name = "oversub", version, about = "Time-window oversubscription experiments on VM traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace from a generator config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Resource-hours, window savings, peaks and stranding of a trace.
    Characterize {
        #[command(flatten)]
        trace: TraceArgs,
        /// Window lengths for the savings analysis; repeatable.
        #[arg(long = "window-hours", default_values_t = [1u32, 2, 4, 8, 24])]
        window_hours: Vec<u32>,
        /// Peak/valley threshold in percentage points.
        #[arg(long, default_value_t = 20.0)]
        threshold_pct: f64,
        /// Stranding fill shape as `cores:gb`.
        #[arg(long, default_value = "4:16", value_parser = parse_fill_shape)]
        fill_shape: [f64; 2],
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train the group model and print per-window profiles of evaluation VMs.
    Predict {
        #[command(flatten)]
        trace: TraceArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 4)]
        window_hours: u32,
        #[arg(long, default_value_t = 95)]
        percentile: u32,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Place the evaluation VMs under one policy.
    Schedule {
        #[command(flatten)]
        trace: TraceArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Schedule under one policy, then replay utilization with mitigation.
    Simulate {
        #[command(flatten)]
        trace: TraceArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value = "full")]
        mitigation: MitigationPolicy,
        #[arg(long, default_value = "proactive")]
        trigger: Trigger,
        #[arg(long)]
        cold_fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the per-server pool timeline.
        #[arg(long)]
        timeline: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a whole experiment from a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the files of a finished run against its manifest.
    Verify { dir: PathBuf },
}

#[derive(Args)]
struct TraceArgs {
    /// Directory with vms.csv, util.csv and servers.csv.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Generator config to draw the trace from instead.
    #[arg(long, conflicts_with = "trace")]
    generator: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "generator")]
    trace_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// VMs starting in the first N days train the predictor.
    #[arg(long, default_value_t = 7)]
    train_days: u32,
    #[arg(long, default_value_t = 3)]
    min_group_size: usize,
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long, default_value = "coach")]
    policy: PolicyKind,
    #[arg(long)]
    percentile: Option<u32>,
    #[arg(long)]
    window_hours: Option<u32>,
    #[arg(long, default_value_t = 1.0)]
    backing_ratio: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output directory; falls back to $OVERSUB_OUT_DIR, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn dir(&self) -> PathBuf {
        self.out.clone().or_else(env_out_dir).unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn env_out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn parse_fill_shape(s: &str) -> Result<[f64; 2], String> {
    let (c, m) = s.split_once(':').ok_or("expected cores:gb")?;
    let c: f64 = c.trim().parse().map_err(|_| format!("bad core count `{c}`"))?;
    let m: f64 = m.trim().parse().map_err(|_| format!("bad memory size `{m}`"))?;
    if !(c > 0.0 && m > 0.0 && c.is_finite() && m.is_finite()) {
        return Err("fill shape must be positive".into());
    }
    Ok([c, m])
}

#[derive(Debug)]
struct Failure {
    class: ErrorClass,
    message: String,
}

impl Failure {
    fn config(m: impl ToString) -> Self {
        Failure { class: ErrorClass::Config, message: m.to_string() }
    }

    fn data(m: impl ToString) -> Self {
        Failure { class: ErrorClass::Data, message: m.to_string() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure { class: e.class(), message: e.to_string() }
    }
}

fn staged<E: Into<StageError>>(stage: &'static str) -> impl FnOnce(E) -> Failure {
    move |e| {
        let e: StageError = e.into();
        Failure { class: e.class(), message: format!("{stage}: {e}") }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.class.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Generate { config, seed, out } => {
            let text =
                std::fs::read_to_string(&config).map_err(|e| Failure::config(format!("{}: {e}", config.display())))?;
            let cfg = GenConfig::from_toml(&text).map_err(Failure::config)?;
            let trace = oversub::trace::generate_synthetic_trace(&cfg, seed).map_err(staged("generate"))?;
            let dir = out.dir();
            write_trace(&dir, &trace).map_err(staged("generate"))?;
            println!("wrote {} vms and {} servers to {}", trace.len(), trace.servers().len(), dir.display());
            Ok(())
        }
        Command::Characterize { trace, window_hours, threshold_pct, fill_shape, out } => {
            let t = trace.load()?;
            let opts = CharacterizeSettings { window_hours, threshold_pct, fill_shape, ..Default::default() };
            opts.validate().map_err(Failure::config)?;
            let c = characterize_trace(&t, &opts).map_err(staged("characterize"))?;
            let mut dir = OutputDir::create(&out.dir()).map_err(Failure::data)?;
            dir.write("characterization.json", &json(&c)).map_err(Failure::data)?;
            if !t.is_empty() {
                // Stranding of the trace packed without oversubscription.
                let log = schedule(&t, None, &Policy::NONE, t.servers(), &PlacementConfig::default())
                    .map_err(staged("characterize"))?;
                let s = stranding_of(&t, &log, &opts).map_err(staged("characterize"))?;
                dir.write("stranding.json", &json(&s)).map_err(Failure::data)?;
            }
            println!("wrote characterization of {} vms to {}", t.len(), dir.root().display());
            Ok(())
        }
        Command::Predict { trace, train, window_hours, percentile, out } => {
            let t = trace.load()?;
            let p = Percentile::new(percentile).map_err(Failure::config)?;
            let (history, eval) = split_trace(&t, train.train_days);
            let model = train_group_model(&history, window_hours, train.min_group_size).map_err(staged("predict"))?;
            let bytes = profiles_csv(&model, &eval, p).map_err(Failure::data)?;
            let mut dir = OutputDir::create(&out.dir()).map_err(Failure::data)?;
            dir.write("profiles.csv", &bytes).map_err(Failure::data)?;
            println!(
                "{} groups from {} history vms; profiles for {} vms in {}",
                model.groups().count(),
                history.len(),
                eval.len(),
                dir.root().display()
            );
            Ok(())
        }
        Command::Schedule { trace, train, policy, out } => {
            let t = trace.load()?;
            let log = schedule_one(&t, &train, &policy)?;
            let mut dir = OutputDir::create(&out.dir()).map_err(Failure::data)?;
            write_schedule(&mut dir, &log)?;
            let s = &log.summary;
            println!(
                "{}: hosted {} of {} vms, rejected {}, peak {} servers",
                log.policy.label(),
                s.hosted_vms,
                s.arrivals,
                s.rejected_vms,
                s.peak_nonempty_servers
            );
            Ok(())
        }
        Command::Simulate { trace, train, policy, mitigation, trigger, cold_fraction, seed, timeline, out } => {
            let t = trace.load()?;
            let mut contention = ContentionConfig { record_timeline: timeline, ..Default::default() };
            if let Some(c) = cold_fraction {
                contention.cold_fraction = c;
            }
            contention.validate().map_err(Failure::config)?;
            let log = schedule_one(&t, &train, &policy)?;
            let (_, eval) = split_trace(&t, train.train_days);
            let r = run_simulation(&log, &eval, &SimConfig { mitigation, trigger, contention, seed })
                .map_err(staged("simulate"))?;
            let mut dir = OutputDir::create(&out.dir()).map_err(Failure::data)?;
            write_schedule(&mut dir, &log)?;
            dir.write("report.json", &json(&r)).map_err(Failure::data)?;
            dir.write("episodes.csv", &to_csv(|b| write_episodes_csv(&r, b))?).map_err(Failure::data)?;
            dir.write("mitigations.csv", &to_csv(|b| write_mitigations_csv(&r, b))?).map_err(Failure::data)?;
            if timeline {
                dir.write("timeline.csv", &to_csv(|b| write_timeline_csv(&r, b))?).map_err(Failure::data)?;
            }
            let summary =
                emit_report(std::slice::from_ref(&log), std::slice::from_ref(&r)).map_err(staged("report"))?;
            dir.write("summary.csv", &to_csv(|b| write_summary_csv(&summary, b))?).map_err(Failure::data)?;
            println!(
                "{} {mitigation}/{}: memory violation {:.0}s in {} episodes, {} mitigations",
                log.policy.label(),
                trigger.as_str(),
                r.memory_violation_secs(),
                r.memory_episodes.len(),
                r.mitigations.len()
            );
            Ok(())
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config).map_err(Failure::config)?;
            if let Some(dir) = out.or_else(env_out_dir) {
                cfg.output_dir = dir;
            }
            let r = run_experiment(&cfg)?;
            for p in &r.summary.policies {
                let gain = p
                    .gain_vs_none
                    .as_ref()
                    .map_or(String::new(), |g| format!(" ({:+.1}% vms vs none)", g.hosted_vms_pct));
                println!("{:<16} hosted {:>6} rejected {:>6}{gain}", p.policy, p.hosted_vms, p.rejected_vms);
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Verify { dir } => {
            let bad = verify_manifest(&dir).map_err(Failure::data)?;
            if bad.is_empty() {
                println!("all files match");
                Ok(())
            } else {
                for d in &bad {
                    eprintln!("{d:?}");
                }
                Err(Failure::data(format!("{} files differ from the manifest", bad.len())))
            }
        }
    }
}

impl TraceArgs {
    fn source(&self) -> Result<TraceSource, Failure> {
        let src = match (&self.trace, &self.generator) {
            (Some(d), None) => TraceSource { dir: Some(d.clone()), ..Default::default() },
            (None, Some(g)) => TraceSource { generator: Some(g.clone()), ..Default::default() },
            _ => return Err(Failure::config("pass either --trace or --generator")),
        };
        Ok(src)
    }

    fn load(&self) -> Result<TraceSet, Failure> {
        let src = self.source()?;
        src.preflight().map_err(Failure::config)?;
        load_trace(&src, self.trace_seed).map_err(staged("trace"))
    }
}

fn schedule_one(t: &TraceSet, train: &TrainArgs, args: &PolicyArgs) -> Result<PlacementLog, Failure> {
    let p = args.percentile.map(Percentile::new).transpose().map_err(Failure::config)?;
    let policy = Policy::with_overrides(args.policy, p, args.window_hours).map_err(Failure::config)?;
    if !(args.backing_ratio > 0.0 && args.backing_ratio <= 1.0) {
        return Err(Failure::config(format!("--backing-ratio must be in (0, 1], got {}", args.backing_ratio)));
    }
    let (history, eval) = split_trace(t, train.train_days);
    let model = match policy.kind {
        PolicyKind::None => None,
        _ => Some(train_group_model(&history, policy.window_hours, train.min_group_size).map_err(staged("predict"))?),
    };
    let cfg = PlacementConfig { backing_ratio: args.backing_ratio, ..Default::default() };
    schedule(&eval, model.as_ref().map(|m| m as &dyn UtilizationPredictor), &policy, eval.servers(), &cfg)
        .map_err(staged("schedule"))
}

fn write_schedule(dir: &mut OutputDir, log: &PlacementLog) -> Result<(), Failure> {
    let csv = to_csv(|b| log.write_csv(b).map_err(|e| e.to_string()))?;
    dir.write("placements.csv", &csv).map_err(Failure::data)?;
    dir.write("schedule_summary.json", &json(&log.summary)).map_err(Failure::data)
}

fn profiles_csv(model: &GroupModel, eval: &TraceSet, p: Percentile) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["vm_id", "group", "resource", "window", "p_max", "p_x"])?;
    for vm in eval.vms() {
        let Some((key, _)) = model.lookup(vm) else {
            w.write_record([vm.vm_id.as_str(), "", "", "", "", ""])?;
            continue;
        };
        let group = format!("{}/{}", key.subscription.as_deref().unwrap_or("*"), key.config.as_deref().unwrap_or("*"));
        let profile = model.predict_profile(vm, p).expect("group exists");
        for r in Resource::ALL {
            for (i, wp) in profile.windows(r).iter().enumerate() {
                w.write_record([
                    vm.vm_id.clone(),
                    group.clone(),
                    r.as_str().to_string(),
                    i.to_string(),
                    wp.p_max.to_string(),
                    wp.p_x.to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn to_csv<E: ToString>(f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(Failure::data)?;
    Ok(buf)
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("report types serialize");
    b.push(b'\n');
    b
}
