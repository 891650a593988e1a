//! Seeded synthetic traces with controllable daily patterns.
//!
//! Each subscription is bound to one pattern template and prefers one VM
//! configuration, so `(subscription, config)` groups share behavior and group
//! history is informative for prediction. Subscription sizes follow a Zipf
//! law, which leaves a tail of groups too small to train on.
//!
//! Templates are evaluated at 1-minute resolution; each 5-minute sample is
//! the maximum of its five minute values.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Zipf};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Offering, Server, TraceError, TraceSet, UtilizationSeries, VmRecord, DAY_SECS, STEP_SECS};
use crate::resource::{Resource, ResourceVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    /// First timestamp of the trace; must be on the 5-minute grid.
    #[serde(default = "default_start")]
    pub start_unix: i64,
    pub days: u32,
    pub vm_count: usize,
    pub subscriptions: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Fraction of VMs already running when the trace starts.
    #[serde(default)]
    pub initial_fraction: f64,
    /// Probability that a VM uses its subscription's preferred size.
    #[serde(default = "default_affinity")]
    pub config_affinity: f64,
    #[serde(default)]
    pub paas_fraction: f64,
    pub duration: DurationDist,
    pub sizes: Vec<SizeSpec>,
    pub templates: Vec<Template>,
    pub fleet: Vec<ServerSpec>,
}

fn default_start() -> i64 {
    // 2024-05-06 00:00 UTC, a Monday.
    1_714_953_600
}

fn default_zipf() -> f64 {
    1.1
}

fn default_affinity() -> f64 {
    0.85
}

/// Log-normal VM lifetime, clamped to `[min_hours, max_hours]` and to the
/// end of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationDist {
    pub median_hours: f64,
    pub sigma: f64,
    #[serde(default = "one")]
    pub min_hours: f64,
    #[serde(default)]
    pub max_hours: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeSpec {
    pub name: String,
    pub cpu: f64,
    pub mem_gb: f64,
    #[serde(default)]
    pub net_gbps: f64,
    #[serde(default)]
    pub ssd_gb: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    #[serde(default = "one")]
    pub weight: f64,
    /// Per-VM level offset drawn uniformly from `[-vm_spread, vm_spread]`.
    #[serde(default)]
    pub vm_spread: f64,
    pub cpu: Shape,
    pub mem: Shape,
    #[serde(default)]
    pub net: Option<Shape>,
    #[serde(default)]
    pub ssd: Option<Shape>,
}

impl Template {
    fn shape(&self, r: Resource) -> Shape {
        match r {
            Resource::Cpu => self.cpu.clone(),
            Resource::Mem => self.mem.clone(),
            Resource::Net => self.net.clone().unwrap_or_else(|| Shape::flat(5.0)),
            Resource::Ssd => self.ssd.clone().unwrap_or_else(|| Shape::flat(20.0)),
        }
    }
}

/// A daily utilization shape in percent: `base` everywhere except inside
/// `segments`, plus noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub base: f64,
    #[serde(default)]
    pub segments: Vec<Segment>,
    /// Per-minute uniform noise amplitude.
    #[serde(default)]
    pub jitter: f64,
    /// Per-day level shift amplitude (same shift for the whole day).
    #[serde(default)]
    pub day_jitter: f64,
    /// Per-minute probability of an additive spike.
    #[serde(default)]
    pub spike_prob: f64,
    #[serde(default)]
    pub spike_height: f64,
}

impl Shape {
    pub fn flat(level: f64) -> Self {
        Shape { base: level, segments: Vec::new(), jitter: 0.0, day_jitter: 0.0, spike_prob: 0.0, spike_height: 0.0 }
    }

    fn level_at(&self, minute_of_day: u32) -> f64 {
        let hour = minute_of_day as f64 / 60.0;
        self.segments.iter().rev().find(|s| hour >= s.start_hour && hour < s.end_hour).map_or(self.base, |s| s.level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start_hour: f64,
    pub end_hour: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub count: usize,
    #[serde(default = "default_cluster")]
    pub cluster: String,
    pub cpu: f64,
    pub mem_gb: f64,
    #[serde(default)]
    pub net_gbps: f64,
    #[serde(default)]
    pub ssd_gb: f64,
}

fn default_cluster() -> String {
    "c0".into()
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<Self, TraceError> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| TraceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Config(m));
        if self.start_unix % STEP_SECS != 0 {
            return bad(format!("start_unix {} is not a multiple of {STEP_SECS}", self.start_unix));
        }
        if self.days == 0 || self.days > 3650 {
            return bad(format!("days must be in 1..=3650, got {}", self.days));
        }
        if self.vm_count == 0 || self.vm_count > 10_000_000 {
            return bad(format!("vm_count must be in 1..=10000000, got {}", self.vm_count));
        }
        if self.subscriptions == 0 {
            return bad("subscriptions must be positive".into());
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad(format!("zipf_exponent must be finite and >= 0, got {}", self.zipf_exponent));
        }
        for (name, p) in [
            ("initial_fraction", self.initial_fraction),
            ("config_affinity", self.config_affinity),
            ("paas_fraction", self.paas_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0,1], got {p}"));
            }
        }
        let d = &self.duration;
        if !(d.median_hours.is_finite() && d.median_hours > 0.0) {
            return bad(format!("duration.median_hours must be positive, got {}", d.median_hours));
        }
        if !(d.sigma.is_finite() && d.sigma >= 0.0) {
            return bad(format!("duration.sigma must be >= 0, got {}", d.sigma));
        }
        if !(d.min_hours.is_finite() && d.min_hours > 0.0) {
            return bad(format!("duration.min_hours must be positive, got {}", d.min_hours));
        }
        if let Some(max) = d.max_hours {
            if !(max.is_finite() && max >= d.min_hours) {
                return bad(format!("duration.max_hours must be >= min_hours, got {max}"));
            }
        }
        if self.sizes.is_empty() {
            return bad("at least one size is required".into());
        }
        for s in &self.sizes {
            let v = ResourceVector::new(s.cpu, s.mem_gb, s.net_gbps, s.ssd_gb);
            if !v.is_finite() || !v.is_nonnegative() || s.cpu <= 0.0 || s.mem_gb <= 0.0 {
                return bad(format!("size {} needs positive cpu/mem and non-negative net/ssd", s.name));
            }
            check_weight(&s.name, s.weight)?;
        }
        if self.templates.is_empty() {
            return bad("at least one template is required".into());
        }
        for t in &self.templates {
            check_weight(&t.name, t.weight)?;
            if !(t.vm_spread.is_finite() && (0.0..=100.0).contains(&t.vm_spread)) {
                return bad(format!("template {}: vm_spread must be in [0,100]", t.name));
            }
            for r in Resource::ALL {
                check_shape(&t.name, r, &t.shape(r))?;
            }
        }
        if self.fleet.is_empty() || self.fleet.iter().all(|s| s.count == 0) {
            return bad("fleet must contain at least one server".into());
        }
        for s in &self.fleet {
            let v = ResourceVector::new(s.cpu, s.mem_gb, s.net_gbps, s.ssd_gb);
            if !v.is_finite() || !v.is_nonnegative() || s.count > 1_000_000 {
                return bad(format!("fleet entry in cluster {} has invalid capacity or count", s.cluster));
            }
        }
        Ok(())
    }

    fn trace_end(&self) -> i64 {
        self.start_unix + self.days as i64 * DAY_SECS
    }
}

fn check_weight(name: &str, w: f64) -> Result<(), TraceError> {
    if w.is_finite() && w > 0.0 {
        Ok(())
    } else {
        Err(TraceError::Config(format!("{name}: weight must be positive, got {w}")))
    }
}

fn check_shape(name: &str, r: Resource, s: &Shape) -> Result<(), TraceError> {
    let pct = |v: f64| v.is_finite() && (0.0..=100.0).contains(&v);
    let ok = pct(s.base)
        && pct(s.jitter)
        && pct(s.day_jitter)
        && pct(s.spike_height)
        && (0.0..=1.0).contains(&s.spike_prob)
        && s.segments.iter().all(|seg| {
            pct(seg.level) && seg.start_hour >= 0.0 && seg.start_hour < seg.end_hour && seg.end_hour <= 24.0
        });
    if ok {
        Ok(())
    } else {
        Err(TraceError::Config(format!(
            "template {name}: {r} shape needs levels in [0,100] and segments with 0 <= start_hour < end_hour <= 24"
        )))
    }
}

/// SplitMix64 finalizer, used to derive independent per-VM streams.
fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct SubscriptionProfile {
    template: usize,
    preferred_size: usize,
    offering: Offering,
}

/// Generates a trace that is a pure function of `(cfg, seed)`.
pub fn generate_synthetic_trace(cfg: &GenConfig, seed: u64) -> Result<TraceSet, TraceError> {
    cfg.validate()?;
    let cfg_err = |e: &dyn std::fmt::Display| TraceError::Config(e.to_string());
    let template_pick = WeightedIndex::new(cfg.templates.iter().map(|t| t.weight)).map_err(|e| cfg_err(&e))?;
    let size_pick = WeightedIndex::new(cfg.sizes.iter().map(|s| s.weight)).map_err(|e| cfg_err(&e))?;
    let zipf = Zipf::new(cfg.subscriptions as f64, cfg.zipf_exponent).map_err(|e| cfg_err(&e))?;
    let lifetime = LogNormal::new(cfg.duration.median_hours.ln(), cfg.duration.sigma).map_err(|e| cfg_err(&e))?;

    let subs: Vec<SubscriptionProfile> = (0..cfg.subscriptions)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5B00_0000_0000 + k as u64));
            SubscriptionProfile {
                template: template_pick.sample(&mut rng),
                preferred_size: size_pick.sample(&mut rng),
                offering: if rng.random::<f64>() < cfg.paas_fraction { Offering::Paas } else { Offering::Iaas },
            }
        })
        .collect();

    let trace_end = cfg.trace_end();
    let total_steps = (trace_end - cfg.start_unix) / STEP_SECS;
    let generated: Vec<(VmRecord, [UtilizationSeries; 4])> = (0..cfg.vm_count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, i as u64));
            let sub_idx = (zipf.sample(&mut rng) as usize).clamp(1, cfg.subscriptions) - 1;
            let sub = &subs[sub_idx];
            let size_idx =
                if rng.random::<f64>() < cfg.config_affinity { sub.preferred_size } else { size_pick.sample(&mut rng) };
            let size = &cfg.sizes[size_idx];

            let start = if rng.random::<f64>() < cfg.initial_fraction {
                cfg.start_unix
            } else {
                cfg.start_unix + rng.random_range(0..total_steps) * STEP_SECS
            };
            let mut hours = lifetime.sample(&mut rng).max(cfg.duration.min_hours);
            if let Some(max) = cfg.duration.max_hours {
                hours = hours.min(max);
            }
            let steps = ((hours * 3600.0 / STEP_SECS as f64).ceil() as i64).max(1);
            let end = (start + steps * STEP_SECS).min(trace_end);

            let vm = VmRecord {
                vm_id: format!("vm-{i:06}"),
                subscription_id: format!("sub-{sub_idx:04}"),
                vm_config: size.name.clone(),
                requested: ResourceVector::new(size.cpu, size.mem_gb, size.net_gbps, size.ssd_gb),
                start,
                end,
                offering: sub.offering,
            };
            let template = &cfg.templates[sub.template];
            let series = Resource::ALL.map(|r| {
                let offset = if template.vm_spread > 0.0 {
                    rng.random_range(-template.vm_spread..=template.vm_spread)
                } else {
                    0.0
                };
                render_series(&vm, r, &template.shape(r), offset, &mut rng)
            });
            (vm, series)
        })
        .collect();

    let (vms, series): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    let mut servers = Vec::new();
    for spec in &cfg.fleet {
        for _ in 0..spec.count {
            servers.push(Server {
                server_id: format!("srv-{:05}", servers.len()),
                cluster_id: spec.cluster.clone(),
                capacity: ResourceVector::new(spec.cpu, spec.mem_gb, spec.net_gbps, spec.ssd_gb),
            });
        }
    }
    TraceSet::new(vms, series, servers)
}

fn render_series(vm: &VmRecord, r: Resource, shape: &Shape, offset: f64, rng: &mut ChaCha8Rng) -> UtilizationSeries {
    let steps = vm.num_steps();
    let mut values = Vec::with_capacity(steps);
    let mut day = i64::MIN;
    let mut day_shift = 0.0;
    for k in 0..steps {
        let ts = vm.start + k as i64 * STEP_SECS;
        if ts.div_euclid(DAY_SECS) != day {
            day = ts.div_euclid(DAY_SECS);
            day_shift =
                if shape.day_jitter > 0.0 { rng.random_range(-shape.day_jitter..=shape.day_jitter) } else { 0.0 };
        }
        let minute0 = (ts.rem_euclid(DAY_SECS) / 60) as u32;
        let mut peak = 0.0f64;
        for m in 0..5 {
            let mut v = shape.level_at(minute0 + m) + offset + day_shift;
            if shape.jitter > 0.0 {
                v += rng.random_range(-shape.jitter..=shape.jitter);
            }
            if shape.spike_prob > 0.0 && rng.random::<f64>() < shape.spike_prob {
                v += shape.spike_height;
            }
            peak = peak.max(v);
        }
        values.push(peak.clamp(0.0, 100.0) as f32);
    }
    UtilizationSeries::new(vm.vm_id.clone(), r, vm.start, values)
}
