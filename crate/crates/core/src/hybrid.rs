//! Guaranteed/oversubscribed split of a VM and the server-level pools.
//!
//! All amounts are kept as integer multiples of the management granularity
//! so that sums and comparisons are exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::predict::TimeWindowProfile;
use crate::resource::{Resource, ResourceVector};
use crate::trace::Server;

/// Relative slack used when converting absolute amounts to units, so that
/// `35% of 20GB` is 7 units and not 8.
const UNIT_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HybridError {
    #[error("window schema mismatch: server has {server} windows, allocation has {allocation}")]
    WindowMismatch { server: usize, allocation: usize },
    #[error("granularity mismatch between server and allocation")]
    GranularityMismatch,
    #[error("vm {0} is already placed on this server")]
    AlreadyPlaced(String),
    #[error("vm {0} is not placed on this server")]
    NotPlaced(String),
    #[error("vm {0} does not fit")]
    DoesNotFit(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("invalid granularity: {0}")]
    InvalidGranularity(String),
}

/// Management granularity per resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Granularity(pub ResourceVector);

impl Default for Granularity {
    fn default() -> Self {
        Granularity(ResourceVector::new(0.25, 1.0, 0.1, 1.0))
    }
}

impl Granularity {
    pub fn new(g: ResourceVector) -> Result<Self, HybridError> {
        if g.iter().all(|(_, v)| v.is_finite() && v > 0.0) {
            Ok(Granularity(g))
        } else {
            Err(HybridError::InvalidGranularity(format!("{g:?}")))
        }
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.0[r]
    }

    /// Smallest number of units covering `amount`.
    pub fn units_ceil(&self, r: Resource, amount: f64) -> u64 {
        units_ceil(amount, self.0[r])
    }

    /// Largest number of units contained in `amount`.
    pub fn units_floor(&self, r: Resource, amount: f64) -> u64 {
        units_floor(amount, self.0[r])
    }

    pub fn amount(&self, r: Resource, units: u64) -> f64 {
        units as f64 * self.0[r]
    }
}

pub fn units_ceil(amount: f64, granularity: f64) -> u64 {
    let x = amount / granularity;
    if x <= UNIT_EPS {
        0
    } else {
        (x - UNIT_EPS * x.max(1.0)).ceil() as u64
    }
}

pub fn units_floor(amount: f64, granularity: f64) -> u64 {
    let x = amount / granularity;
    if x <= 0.0 {
        0
    } else {
        (x + UNIT_EPS * x.max(1.0)).floor() as u64
    }
}

/// Guaranteed portion: the largest per-window percentile, in units.
pub fn pa_units(p_x_abs: &[f64], granularity: f64) -> u64 {
    p_x_abs.iter().map(|&p| units_ceil(p, granularity)).max().unwrap_or(0)
}

/// Oversubscribed demand per window: what the window maximum needs beyond
/// the guaranteed portion, in units.
pub fn va_units(p_max_abs: &[f64], pa: u64, granularity: f64) -> Vec<u64> {
    p_max_abs.iter().map(|&p| units_ceil(p, granularity).saturating_sub(pa)).collect()
}

fn pct_of(pct: u8, requested: f64) -> f64 {
    pct as f64 / 100.0 * requested
}

/// Guaranteed amount of `r` for a VM of size `requested`.
pub fn pa_demand(profile: &TimeWindowProfile, r: Resource, requested: f64, g: &Granularity) -> f64 {
    let px: Vec<f64> = profile.windows(r).iter().map(|w| pct_of(w.p_x, requested)).collect();
    g.amount(r, pa_units(&px, g.get(r)))
}

/// Oversubscribed demand of `r` per window given the guaranteed amount.
pub fn va_demand(profile: &TimeWindowProfile, pa: f64, r: Resource, requested: f64, g: &Granularity) -> Vec<f64> {
    let pmax: Vec<f64> = profile.windows(r).iter().map(|w| pct_of(w.p_max, requested)).collect();
    va_units(&pmax, g.units_ceil(r, pa), g.get(r)).into_iter().map(|u| g.amount(r, u)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fungibility {
    Fungible,
    NonFungible,
}

impl Fungibility {
    pub fn of(r: Resource) -> Self {
        if r.is_fungible() {
            Fungibility::Fungible
        } else {
            Fungibility::NonFungible
        }
    }
}

/// A VM's guaranteed amount and per-window oversubscribed demand for every
/// resource, in granularity units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridAllocation {
    granularity: Granularity,
    requested: [u64; 4],
    guaranteed: [u64; 4],
    va: [Vec<u64>; 4],
}

impl HybridAllocation {
    /// Memory follows the PA/VA rule: guaranteed = max window percentile,
    /// VA = window maximum above it. Fungible resources are scheduled on the
    /// per-window percentile itself; the part common to every window is
    /// reported as guaranteed and the rest as per-window demand.
    pub fn from_profile(requested: &ResourceVector, profile: &TimeWindowProfile, g: &Granularity) -> Self {
        let mut guaranteed = [0; 4];
        let mut va: [Vec<u64>; 4] = Default::default();
        let mut req = [0; 4];
        for r in Resource::ALL {
            let (i, gr) = (r.index(), g.get(r));
            req[i] = g.units_ceil(r, requested[r]);
            let w = profile.windows(r);
            let px: Vec<f64> = w.iter().map(|p| pct_of(p.p_x, requested[r])).collect();
            if r.is_fungible() {
                let d: Vec<u64> = px.iter().map(|&p| units_ceil(p, gr).min(req[i])).collect();
                let base = d.iter().copied().min().unwrap_or(0);
                guaranteed[i] = base;
                va[i] = d.iter().map(|&u| u - base).collect();
            } else {
                let pmax: Vec<f64> = w.iter().map(|p| pct_of(p.p_max, requested[r])).collect();
                let pa = pa_units(&px, gr).min(req[i]);
                guaranteed[i] = pa;
                va[i] = va_units(&pmax, pa, gr).into_iter().map(|u| u.min(req[i] - pa)).collect();
            }
        }
        HybridAllocation { granularity: *g, requested: req, guaranteed, va }
    }

    /// No prediction: the whole request is guaranteed.
    pub fn full(requested: &ResourceVector, windows: usize, g: &Granularity) -> Self {
        let req = Resource::ALL.map(|r| g.units_ceil(r, requested[r]));
        HybridAllocation { granularity: *g, requested: req, guaranteed: req, va: Default::default() }
            .with_windows(windows)
    }

    fn with_windows(mut self, windows: usize) -> Self {
        for v in &mut self.va {
            v.resize(windows, 0);
        }
        self
    }

    /// Builds an allocation from raw units, checking its invariants.
    pub fn from_units(
        g: Granularity,
        requested: [u64; 4],
        guaranteed: [u64; 4],
        va: [Vec<u64>; 4],
    ) -> Result<Self, HybridError> {
        let windows = va[0].len();
        if windows == 0 || va.iter().any(|v| v.len() != windows) {
            return Err(HybridError::InvalidAllocation("ragged or empty window vectors".into()));
        }
        for i in 0..4 {
            let peak = va[i].iter().copied().max().unwrap_or(0);
            if guaranteed[i] + peak > requested[i] {
                return Err(HybridError::InvalidAllocation(format!(
                    "{}: guaranteed {} + peak VA {} exceeds request {}",
                    Resource::ALL[i],
                    guaranteed[i],
                    peak,
                    requested[i]
                )));
            }
        }
        Ok(HybridAllocation { granularity: g, requested, guaranteed, va })
    }

    pub fn granularity(&self) -> &Granularity {
        &self.granularity
    }

    pub fn windows(&self) -> usize {
        self.va[0].len()
    }

    pub fn fungibility(&self, r: Resource) -> Fungibility {
        Fungibility::of(r)
    }

    pub fn requested_units(&self, r: Resource) -> u64 {
        self.requested[r.index()]
    }

    pub fn guaranteed_units(&self, r: Resource) -> u64 {
        self.guaranteed[r.index()]
    }

    pub fn va_units(&self, r: Resource) -> &[u64] {
        &self.va[r.index()]
    }

    /// Guaranteed plus oversubscribed demand in window `t`.
    pub fn window_units(&self, r: Resource, t: usize) -> u64 {
        self.guaranteed[r.index()] + self.va[r.index()][t]
    }

    pub fn peak_units(&self, r: Resource) -> u64 {
        self.guaranteed[r.index()] + self.va[r.index()].iter().copied().max().unwrap_or(0)
    }

    pub fn guaranteed(&self) -> ResourceVector {
        ResourceVector::from_fn(|r| self.granularity.amount(r, self.guaranteed_units(r)))
    }

    pub fn va(&self, r: Resource, t: usize) -> f64 {
        self.granularity.amount(r, self.va[r.index()][t])
    }

    /// Allocated amount in window `t` (guaranteed + VA demand).
    pub fn window_amount(&self, r: Resource, t: usize) -> f64 {
        self.granularity.amount(r, self.window_units(r, t))
    }

    pub fn peak(&self) -> ResourceVector {
        ResourceVector::from_fn(|r| self.granularity.amount(r, self.peak_units(r)))
    }

    pub fn is_full_reservation(&self) -> bool {
        self.requested == self.guaranteed && self.va.iter().flatten().all(|&v| v == 0)
    }
}

/// Guaranteed sum and multiplexed oversubscribed pool, per resource, in units.
pub fn server_pools<'a>(allocs: impl IntoIterator<Item = &'a HybridAllocation>) -> ([u64; 4], [u64; 4]) {
    let mut guaranteed = [0; 4];
    let mut totals: [Vec<u64>; 4] = Default::default();
    for a in allocs {
        for r in Resource::ALL {
            let i = r.index();
            guaranteed[i] += a.guaranteed[i];
            let t = &mut totals[i];
            if t.len() < a.va[i].len() {
                t.resize(a.va[i].len(), 0);
            }
            for (s, v) in t.iter_mut().zip(&a.va[i]) {
                *s += v;
            }
        }
    }
    (guaranteed, totals.map(|t| t.into_iter().max().unwrap_or(0)))
}

/// Outcome of a fit check: per resource, per window `capacity - (Σ guaranteed
/// + Σ VA_t)` after adding the candidate, plus the memory PA-sum slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub fits: bool,
    pub window_slack: [Vec<i64>; 4],
    pub pa_slack: i64,
}

impl FitResult {
    /// Tightest post-placement slack as a fraction of capacity.
    pub fn dominant_slack(&self, capacity_units: &[u64; 4]) -> f64 {
        let mut best = f64::INFINITY;
        for (i, slack) in self.window_slack.iter().enumerate() {
            let cap = capacity_units[i];
            for &s in slack {
                let norm = if cap == 0 {
                    if s >= 0 {
                        0.0
                    } else {
                        -1.0
                    }
                } else {
                    s as f64 / cap as f64
                };
                best = best.min(norm);
            }
        }
        best
    }
}

/// A server's placed allocations and derived pools.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub server_id: String,
    pub cluster_id: String,
    pub capacity: ResourceVector,
    granularity: Granularity,
    backing_ratio: f64,
    capacity_units: [u64; 4],
    placed: BTreeMap<String, HybridAllocation>,
    guaranteed_sum: [u64; 4],
    va_totals: [Vec<u64>; 4],
    /// Memory units added to the pool at runtime from unallocated capacity.
    extension: u64,
}

impl ServerState {
    pub fn new(server: &Server, windows: usize, granularity: Granularity, backing_ratio: f64) -> Self {
        assert!(windows > 0, "at least one window");
        assert!(backing_ratio > 0.0 && backing_ratio <= 1.0, "backing ratio {backing_ratio} outside (0, 1]");
        ServerState {
            server_id: server.server_id.clone(),
            cluster_id: server.cluster_id.clone(),
            capacity: server.capacity,
            granularity,
            backing_ratio,
            capacity_units: Resource::ALL.map(|r| granularity.units_floor(r, server.capacity[r])),
            placed: BTreeMap::new(),
            guaranteed_sum: [0; 4],
            va_totals: std::array::from_fn(|_| vec![0; windows]),
            extension: 0,
        }
    }

    pub fn windows(&self) -> usize {
        self.va_totals[0].len()
    }

    pub fn granularity(&self) -> &Granularity {
        &self.granularity
    }

    pub fn capacity_units(&self) -> &[u64; 4] {
        &self.capacity_units
    }

    pub fn placed(&self) -> impl Iterator<Item = (&str, &HybridAllocation)> {
        self.placed.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn allocation(&self, vm_id: &str) -> Option<&HybridAllocation> {
        self.placed.get(vm_id)
    }

    pub fn len(&self) -> usize {
        self.placed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placed.is_empty()
    }

    pub fn guaranteed_units(&self, r: Resource) -> u64 {
        self.guaranteed_sum[r.index()]
    }

    pub fn va_total_units(&self, r: Resource) -> &[u64] {
        &self.va_totals[r.index()]
    }

    /// Multiplexed pool before backing ratio and extensions.
    pub fn multiplexed_va_units(&self, r: Resource) -> u64 {
        self.va_totals[r.index()].iter().copied().max().unwrap_or(0)
    }

    /// Backed oversubscribed pool: `ceil(backing_ratio * max_t Σ VA_t)`, plus
    /// runtime extensions for memory.
    pub fn pool_units(&self, r: Resource) -> u64 {
        let m = self.multiplexed_va_units(r);
        let backed = if self.backing_ratio >= 1.0 { m } else { units_ceil(m as f64 * self.backing_ratio, 1.0) };
        backed + if r == Resource::Mem { self.extension } else { 0 }
    }

    pub fn guaranteed_sum(&self) -> ResourceVector {
        ResourceVector::from_fn(|r| self.granularity.amount(r, self.guaranteed_units(r)))
    }

    pub fn oversub_pool(&self) -> ResourceVector {
        ResourceVector::from_fn(|r| self.granularity.amount(r, self.pool_units(r)))
    }

    pub fn extension_units(&self) -> u64 {
        self.extension
    }

    /// Memory not covered by guaranteed portions or the pool.
    pub fn unallocated_mem_units(&self) -> u64 {
        let r = Resource::Mem;
        self.capacity_units[r.index()].saturating_sub(self.guaranteed_units(r) + self.pool_units(r))
    }

    /// Grows the memory pool by up to `units` of unallocated memory; returns
    /// the units granted.
    pub fn extend_pool(&mut self, units: u64) -> u64 {
        let granted = units.min(self.unallocated_mem_units());
        self.extension += granted;
        granted
    }

    /// Returns up to `units` of extension to unallocated memory.
    pub fn shrink_extension(&mut self, units: u64) -> u64 {
        let released = units.min(self.extension);
        self.extension -= released;
        released
    }

    fn check_schema(&self, a: &HybridAllocation) -> Result<(), HybridError> {
        if a.windows() != self.windows() {
            return Err(HybridError::WindowMismatch { server: self.windows(), allocation: a.windows() });
        }
        if a.granularity != self.granularity {
            return Err(HybridError::GranularityMismatch);
        }
        Ok(())
    }

    /// Per-window predicted totals of every resource plus the memory PA-sum
    /// slot, with the candidate added.
    pub fn fit_check(&self, candidate: &HybridAllocation) -> Result<FitResult, HybridError> {
        self.check_schema(candidate)?;
        let mut fits = true;
        let window_slack = Resource::ALL.map(|r| {
            let i = r.index();
            let g = (self.guaranteed_sum[i] + candidate.guaranteed[i]) as i64;
            let mut cap = self.capacity_units[i] as i64;
            if r == Resource::Mem {
                // Runtime extensions occupy otherwise unallocated memory.
                cap -= self.extension as i64;
            }
            self.va_totals[i]
                .iter()
                .zip(&candidate.va[i])
                .map(|(&tot, &v)| {
                    let s = cap - g - (tot + v) as i64;
                    fits &= s >= 0;
                    s
                })
                .collect::<Vec<_>>()
        });
        let m = Resource::Mem.index();
        let pa_slack = self.capacity_units[m] as i64 - (self.guaranteed_sum[m] + candidate.guaranteed[m]) as i64;
        fits &= pa_slack >= 0;
        Ok(FitResult { fits, window_slack, pa_slack })
    }

    /// Same decision as [`fit_check`](Self::fit_check) without building the
    /// slack vectors: `Some(dominant slack)` when the candidate fits.
    pub fn fit_score(&self, candidate: &HybridAllocation) -> Result<Option<f64>, HybridError> {
        self.check_schema(candidate)?;
        let m = Resource::Mem.index();
        if self.guaranteed_sum[m] + candidate.guaranteed[m] > self.capacity_units[m] {
            return Ok(None);
        }
        let mut best = f64::INFINITY;
        for i in 0..4 {
            let mut cap = self.capacity_units[i] as i64;
            if i == m {
                cap -= self.extension as i64;
            }
            let g = (self.guaranteed_sum[i] + candidate.guaranteed[i]) as i64;
            for (&tot, &v) in self.va_totals[i].iter().zip(&candidate.va[i]) {
                let s = cap - g - (tot + v) as i64;
                if s < 0 {
                    return Ok(None);
                }
                let norm = if self.capacity_units[i] == 0 { 0.0 } else { s as f64 / self.capacity_units[i] as f64 };
                best = best.min(norm);
            }
        }
        Ok(Some(best))
    }

    /// Adds a VM if it fits.
    pub fn place(&mut self, vm_id: &str, alloc: HybridAllocation) -> Result<FitResult, HybridError> {
        if self.placed.contains_key(vm_id) {
            return Err(HybridError::AlreadyPlaced(vm_id.to_string()));
        }
        let fit = self.fit_check(&alloc)?;
        if !fit.fits {
            return Err(HybridError::DoesNotFit(vm_id.to_string()));
        }
        for i in 0..4 {
            self.guaranteed_sum[i] += alloc.guaranteed[i];
            for (s, v) in self.va_totals[i].iter_mut().zip(&alloc.va[i]) {
                *s += v;
            }
        }
        self.placed.insert(vm_id.to_string(), alloc);
        Ok(fit)
    }

    /// Releases exactly what was placed for `vm_id`.
    pub fn remove(&mut self, vm_id: &str) -> Result<HybridAllocation, HybridError> {
        let alloc = self.placed.remove(vm_id).ok_or_else(|| HybridError::NotPlaced(vm_id.to_string()))?;
        for i in 0..4 {
            self.guaranteed_sum[i] -= alloc.guaranteed[i];
            for (s, v) in self.va_totals[i].iter_mut().zip(&alloc.va[i]) {
                *s -= v;
            }
        }
        Ok(alloc)
    }

    /// Verifies the incremental sums against a recomputation and the
    /// capacity invariants.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut g = [0u64; 4];
        let mut tot: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; self.windows()]);
        for a in self.placed.values() {
            for i in 0..4 {
                g[i] += a.guaranteed[i];
                for (s, v) in tot[i].iter_mut().zip(&a.va[i]) {
                    *s += v;
                }
            }
        }
        if g != self.guaranteed_sum || tot != self.va_totals {
            return Err(format!("{}: incremental sums drifted from recomputation", self.server_id));
        }
        for r in Resource::ALL {
            let i = r.index();
            if self.guaranteed_sum[i] + self.pool_units(r) > self.capacity_units[i] {
                return Err(format!(
                    "{}: {r} guaranteed {} + pool {} exceeds capacity {}",
                    self.server_id,
                    self.guaranteed_sum[i],
                    self.pool_units(r),
                    self.capacity_units[i]
                ));
            }
            for (t, &v) in self.va_totals[i].iter().enumerate() {
                if self.guaranteed_sum[i] + v > self.capacity_units[i] {
                    return Err(format!("{}: {r} window {t} total exceeds capacity", self.server_id));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::{Percentile, WindowPrediction};

    fn server(mem: f64) -> Server {
        Server {
            server_id: "s0".into(),
            cluster_id: "c0".into(),
            capacity: ResourceVector::new(64.0, mem, 40.0, 2000.0),
        }
    }

    fn mem_only(requested_gb: u64, pa: u64, va: Vec<u64>) -> HybridAllocation {
        let w = va.len();
        let mut vas: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; w]);
        vas[Resource::Mem.index()] = va;
        HybridAllocation::from_units(Granularity::default(), [0, requested_gb, 0, 0], [0, pa, 0, 0], vas).unwrap()
    }

    fn profile(px: &[u8], pmax: &[u8]) -> TimeWindowProfile {
        let w: Vec<WindowPrediction> =
            px.iter().zip(pmax).map(|(&p_x, &p_max)| WindowPrediction { p_max, p_x }).collect();
        let hours = 24 / w.len() as u32;
        TimeWindowProfile::new(hours, Percentile::P95, [w.clone(), w.clone(), w.clone(), w]).unwrap()
    }

    #[test]
    fn unit_conversion_tolerates_float_noise() {
        assert_eq!(units_ceil(0.35 * 20.0, 1.0), 7);
        assert_eq!(units_ceil(7.01, 1.0), 8);
        assert_eq!(units_ceil(1.0, 0.25), 4);
        assert_eq!(units_ceil(0.3, 0.1), 3);
        assert_eq!(units_floor(0.3, 0.1), 3);
        assert_eq!(units_ceil(0.0, 1.0), 0);
    }

    #[test]
    fn pa_is_max_window_percentile() {
        let g = Granularity::default();
        let p = profile(&[50, 25, 40], &[60, 30, 45]);
        assert_eq!(pa_demand(&p, Resource::Mem, 32.0, &g), 16.0);
        let full = profile(&[100, 100, 100], &[100, 100, 100]);
        assert_eq!(pa_demand(&full, Resource::Mem, 32.0, &g), 32.0);
        assert_eq!(va_demand(&full, 32.0, Resource::Mem, 32.0, &g), vec![0.0; 3]);
    }

    #[test]
    fn worked_example_vectors() {
        assert_eq!(pa_units(&[16.0, 8.0, 12.0], 1.0), 16);
        assert_eq!(va_units(&[28.0, 8.0, 22.0], 16, 1.0), vec![12, 0, 6]);
        assert_eq!(va_units(&[10.0, 18.0, 24.0], 12, 1.0), vec![0, 6, 12]);
        let vm1 = mem_only(32, 16, vec![12, 0, 6]);
        let vm2 = mem_only(32, 12, vec![0, 6, 12]);
        let (g, pool) = server_pools([&vm1, &vm2]);
        assert_eq!(g[Resource::Mem.index()], 28);
        assert_eq!(pool[Resource::Mem.index()], 18);
    }

    #[test]
    fn coincident_peaks_do_not_multiplex() {
        let a = mem_only(32, 0, vec![10, 0, 0]);
        let (_, pool) = server_pools([&a, &a.clone()]);
        assert_eq!(pool[Resource::Mem.index()], 20);
        let (_, single) = server_pools([&a]);
        assert_eq!(single[Resource::Mem.index()], 10);
    }

    #[test]
    fn cpu_window_vector_fit() {
        // 8-core VM predicted {2,6,4} cores; server with {4,6,8} free.
        let g = Granularity::default();
        let mut srv = server(48.0);
        srv.capacity.cpu = 8.0;
        let mut s = ServerState::new(&srv, 3, g, 1.0);
        let mut va: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; 3]);
        va[0] = vec![16, 8, 0];
        s.place("busy", HybridAllocation::from_units(g, [32, 0, 0, 0], [0; 4], va).unwrap()).unwrap();
        let mut va: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0; 3]);
        va[0] = vec![0, 16, 8];
        let cand = HybridAllocation::from_units(g, [32, 0, 0, 0], [8, 0, 0, 0], va).unwrap();
        let fit = s.fit_check(&cand).unwrap();
        assert!(fit.fits);
        // Slack in cores {2,0,4} = {8,0,16} quarter-core units.
        assert_eq!(fit.window_slack[0], vec![8, 0, 16]);
    }

    #[test]
    fn worked_example_admission() {
        let mut s = ServerState::new(&server(48.0), 3, Granularity::default(), 1.0);
        s.place("vm1", mem_only(32, 16, vec![12, 0, 6])).unwrap();
        s.place("vm2", mem_only(32, 12, vec![0, 6, 12])).unwrap();
        assert_eq!(s.guaranteed_sum().mem, 28.0);
        assert_eq!(s.oversub_pool().mem, 18.0);
        s.check_invariants().unwrap();
        let third = s.fit_check(&mem_only(32, 12, vec![0, 6, 12])).unwrap();
        assert!(!third.fits);
        assert_eq!(s.place("vm3", mem_only(32, 12, vec![0, 6, 12])), Err(HybridError::DoesNotFit("vm3".into())));
    }

    #[test]
    fn remove_restores_prior_state() {
        let mut s = ServerState::new(&server(128.0), 3, Granularity::default(), 1.0);
        s.place("a", mem_only(32, 16, vec![12, 0, 6])).unwrap();
        let before = s.clone();
        s.place("b", mem_only(32, 12, vec![0, 6, 12])).unwrap();
        s.remove("b").unwrap();
        assert_eq!(s, before);
        assert_eq!(s.remove("b"), Err(HybridError::NotPlaced("b".into())));
    }

    #[test]
    fn schema_mismatch_is_an_error() {
        let s = ServerState::new(&server(48.0), 6, Granularity::default(), 1.0);
        assert_eq!(
            s.fit_check(&mem_only(32, 16, vec![12, 0, 6])).unwrap_err(),
            HybridError::WindowMismatch { server: 6, allocation: 3 }
        );
    }

    #[test]
    fn full_reservation_without_prediction() {
        let g = Granularity::default();
        let a = HybridAllocation::full(&ResourceVector::new(4.0, 16.0, 2.0, 64.0), 6, &g);
        assert!(a.is_full_reservation());
        assert_eq!(a.peak(), ResourceVector::new(4.0, 16.0, 2.0, 64.0));
        assert_eq!(a.windows(), 6);
    }

    #[test]
    fn from_profile_splits_memory_and_cpu() {
        let g = Granularity::default();
        let p = profile(&[25, 50, 25], &[50, 75, 40]);
        let a = HybridAllocation::from_profile(&ResourceVector::new(8.0, 32.0, 10.0, 100.0), &p, &g);
        assert_eq!(a.guaranteed_units(Resource::Mem), 16);
        assert_eq!(a.va_units(Resource::Mem), &[0, 8, 0]);
        // CPU demand per window {2,4,2} cores.
        assert_eq!(a.guaranteed_units(Resource::Cpu), 8);
        assert_eq!(a.va_units(Resource::Cpu), &[0, 8, 0]);
        assert_eq!(a.window_amount(Resource::Cpu, 1), 4.0);
    }

    #[test]
    fn backing_ratio_and_extension() {
        let mut s = ServerState::new(&server(64.0), 3, Granularity::default(), 0.7);
        s.place("vm1", mem_only(32, 16, vec![12, 0, 6])).unwrap();
        s.place("vm2", mem_only(32, 12, vec![0, 6, 12])).unwrap();
        // ceil(0.7 * 18) = 13.
        assert_eq!(s.pool_units(Resource::Mem), 13);
        assert_eq!(s.unallocated_mem_units(), 64 - 28 - 13);
        assert_eq!(s.extend_pool(100), 23);
        assert_eq!(s.unallocated_mem_units(), 0);
        s.check_invariants().unwrap();
        assert_eq!(s.shrink_extension(5), 5);
        assert_eq!(s.extension_units(), 18);
    }
}
