use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characterize::OversubMode;
use crate::predict::Percentile;
use crate::resource::ResourceVector;
use crate::scheduler::{Policy, PolicyKind};
use crate::simulate::{ContentionConfig, MitigationPolicy, Trigger};
use crate::trace::{windows_per_day, GenConfig};

/// Where the trace comes from. Exactly one of `dir`, `generator` or
/// `generate` must be set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSource {
    /// Directory holding `vms.csv`, `util.csv` and `servers.csv`.
    pub dir: Option<PathBuf>,
    /// Path to a generator TOML file.
    pub generator: Option<PathBuf>,
    /// Inline generator config.
    pub generate: Option<GenConfig>,
    /// Copy the trace into the output directory.
    #[serde(default)]
    pub save: bool,
}

impl TraceSource {
    /// Checks that referenced files exist.
    pub fn preflight(&self) -> Result<(), String> {
        if let Some(dir) = &self.dir {
            for name in ["vms.csv", "util.csv", "servers.csv"] {
                let p = dir.join(name);
                if !p.is_file() {
                    return Err(format!("trace file {} does not exist", p.display()));
                }
            }
        }
        if let Some(p) = &self.generator {
            if !p.is_file() {
                return Err(format!("generator config {} does not exist", p.display()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionSettings {
    /// VMs starting in the first `train_days` days are history only; the
    /// rest are scheduled and simulated.
    pub train_days: u32,
    pub min_group_size: usize,
}

impl Default for PredictionSettings {
    fn default() -> Self {
        PredictionSettings { train_days: 7, min_group_size: 3 }
    }
}

/// A policy entry: a bare name takes the policy defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Name(PolicyKind),
    Custom {
        kind: PolicyKind,
        #[serde(default)]
        percentile: Option<u32>,
        #[serde(default)]
        window_hours: Option<u32>,
    },
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<Policy, String> {
        match *self {
            PolicySpec::Name(kind) => Ok(Policy::of(kind)),
            PolicySpec::Custom { kind, percentile, window_hours } => {
                let p = percentile.map(Percentile::new).transpose().map_err(|e| e.to_string())?;
                Policy::with_overrides(kind, p, window_hours).map_err(|e| e.to_string())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementSettings {
    /// Fraction of server memory that may back guaranteed plus pooled
    /// memory.
    pub backing_ratio: f64,
}

impl Default for PlacementSettings {
    fn default() -> Self {
        PlacementSettings { backing_ratio: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub enabled: bool,
    pub mitigations: Vec<MitigationPolicy>,
    pub triggers: Vec<Trigger>,
    /// Policies to replay; empty means every policy except `none`.
    pub policies: Vec<PolicyKind>,
    pub contention: ContentionConfig,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            enabled: true,
            mitigations: vec![MitigationPolicy::Full],
            triggers: vec![Trigger::Proactive],
            policies: Vec::new(),
            contention: ContentionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizeSettings {
    pub enabled: bool,
    /// Window lengths for the savings analysis.
    pub window_hours: Vec<u32>,
    /// Window length and threshold for peak/valley detection.
    pub peak_window_hours: u32,
    pub threshold_pct: f64,
    /// Hypothetical VM used for stranding, `[cores, gb]`.
    pub fill_shape: [f64; 2],
    pub stranding_every_hours: u32,
    pub stranding_modes: Vec<OversubMode>,
}

impl Default for CharacterizeSettings {
    fn default() -> Self {
        CharacterizeSettings {
            enabled: true,
            window_hours: vec![1, 2, 4, 8, 24],
            peak_window_hours: 4,
            threshold_pct: 20.0,
            fill_shape: [4.0, 16.0],
            stranding_every_hours: 24,
            stranding_modes: vec![OversubMode::None, OversubMode::CpuOnly, OversubMode::CpuMem],
        }
    }
}

impl CharacterizeSettings {
    pub fn validate(&self) -> Result<(), String> {
        let c = self;
        for &h in c.window_hours.iter().chain([&c.peak_window_hours]) {
            if windows_per_day(h).is_none() {
                return Err(format!("characterize window length {h}h does not divide a day"));
            }
        }
        if !(0.0..=100.0).contains(&c.threshold_pct) {
            return Err(format!("characterize.threshold_pct must be in [0, 100], got {}", c.threshold_pct));
        }
        if !(c.fill_shape[0] > 0.0 && c.fill_shape[1] > 0.0 && c.fill_shape.iter().all(|x| x.is_finite())) {
            return Err("characterize.fill_shape must be two positive numbers".into());
        }
        if c.stranding_every_hours == 0 {
            return Err("characterize.stranding_every_hours must be at least 1".into());
        }
        Ok(())
    }

    pub fn fill_vector(&self) -> ResourceVector {
        ResourceVector::new(self.fill_shape[0], self.fill_shape[1], 0.0, 0.0)
    }
}

/// One experiment. See `docs/config.md` for the file grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Not part of the config hash.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
    pub trace: TraceSource,
    #[serde(default)]
    pub prediction: PredictionSettings,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub placement: PlacementSettings,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub characterize: CharacterizeSettings,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_policies() -> Vec<PolicySpec> {
    [PolicyKind::None, PolicyKind::Single, PolicyKind::Coach].map(PolicySpec::Name).to_vec()
}

impl ExperimentConfig {
    /// Parses and validates a config. Relative trace paths are resolved
    /// against `base_dir`; `output_dir` is left as written.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, String> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base_dir.join(&*path);
                }
            }
        };
        resolve(&mut cfg.trace.dir);
        resolve(&mut cfg.trace.generator);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Checks everything that does not touch the file system.
    pub fn validate(&self) -> Result<(), String> {
        let t = &self.trace;
        let sources = t.dir.is_some() as u8 + t.generator.is_some() as u8 + t.generate.is_some() as u8;
        if sources != 1 {
            return Err("[trace] needs exactly one of `dir`, `generator` or `generate`".into());
        }
        if let Some(g) = &t.generate {
            g.validate().map_err(|e| e.to_string())?;
        }
        if self.policies.is_empty() {
            return Err("`policies` is empty".into());
        }
        let policies = self.resolved_policies()?;
        for (i, p) in policies.iter().enumerate() {
            if policies[..i].contains(p) {
                return Err(format!("policy {} is listed twice", p.label()));
            }
        }
        if self.prediction.min_group_size == 0 {
            return Err("prediction.min_group_size must be at least 1".into());
        }
        let b = self.placement.backing_ratio;
        if !(b > 0.0 && b <= 1.0) {
            return Err(format!("placement.backing_ratio must be in (0, 1], got {b}"));
        }
        let s = &self.simulation;
        if s.enabled && (s.mitigations.is_empty() || s.triggers.is_empty()) {
            return Err("simulation needs at least one mitigation and one trigger".into());
        }
        s.contention.validate().map_err(|e| e.to_string())?;
        self.characterize.validate()?;
        Ok(())
    }

    /// Checks referenced inputs exist. Runs before anything is written.
    pub fn preflight(&self) -> Result<(), String> {
        self.trace.preflight()?;
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            return Err(format!("output path {} is not a directory", self.output_dir.display()));
        }
        Ok(())
    }

    pub fn resolved_policies(&self) -> Result<Vec<Policy>, String> {
        self.policies.iter().map(PolicySpec::resolve).collect()
    }

    /// Hex sha256 of the canonical JSON form of the config, without the
    /// output directory.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
