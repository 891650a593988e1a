//! Utilization prediction.
//!
//! Long-term: per-time-window percentile profiles for an incoming VM, learned
//! from the window maxima of earlier VMs in the same subscription and
//! configuration. Short-term: an EWMA for the next monitor period and a
//! seasonal/trend forecaster for the next five minutes.

mod group;
mod runtime;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::resource::Resource;
use crate::trace::{windows_per_day, VmRecord};

pub use group::{train_group_model, GroupHistory, GroupKey, GroupModel};
pub use runtime::{Ewma, HorizonForecast, HorizonPredictor, DEFAULT_EWMA_ALPHA};

/// Utilization predictions are made in buckets of this many percent.
pub const BUCKET_PCT: u8 = 5;
pub const BUCKETS: usize = 100 / BUCKET_PCT as usize + 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PredictError {
    #[error("window length {0}h does not divide a day")]
    WindowHours(u32),
    #[error("percentile {0} outside 50..=99")]
    Percentile(u32),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

/// Prediction percentile, 50..=99.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Percentile(u8);

impl Percentile {
    pub const P50: Percentile = Percentile(50);
    pub const P95: Percentile = Percentile(95);
    pub const P99: Percentile = Percentile(99);

    pub fn new(p: u32) -> Result<Self, PredictError> {
        if (50..=99).contains(&p) {
            Ok(Percentile(p as u8))
        } else {
            Err(PredictError::Percentile(p))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u32> for Percentile {
    type Error = PredictError;

    fn try_from(p: u32) -> Result<Self, PredictError> {
        Percentile::new(p)
    }
}

impl From<Percentile> for u32 {
    fn from(p: Percentile) -> u32 {
        p.0 as u32
    }
}

impl fmt::Display for Percentile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Rounds a utilization percentage up to the next bucket boundary.
pub fn bucket_ceil(pct: f64) -> u8 {
    let b = (pct.clamp(0.0, 100.0) / BUCKET_PCT as f64).ceil() as u8;
    b.min((BUCKETS - 1) as u8) * BUCKET_PCT
}

/// Counts of values per 5% bucket (value rounded up to its bucket).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BucketHistogram {
    counts: [u64; BUCKETS],
    total: u64,
}

impl BucketHistogram {
    pub fn add(&mut self, pct: f64) {
        self.add_bucket(bucket_ceil(pct), 1);
    }

    pub fn add_bucket(&mut self, bucket: u8, count: u64) {
        self.counts[(bucket / BUCKET_PCT) as usize] += count;
        self.total += count;
    }

    pub fn merge(&mut self, other: &BucketHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> impl Iterator<Item = (u8, u64)> + '_ {
        self.counts.iter().enumerate().map(|(i, &c)| (i as u8 * BUCKET_PCT, c))
    }

    /// Nearest-rank quantile: the smallest bucket whose cumulative count
    /// reaches `ceil(p/100 * n)`. `p` in 1..=100.
    pub fn quantile(&self, p: u32) -> Option<u8> {
        if self.total == 0 {
            return None;
        }
        let rank = (p.clamp(1, 100) as u64 * self.total).div_ceil(100).clamp(1, self.total);
        let mut seen = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                return Some(i as u8 * BUCKET_PCT);
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPrediction {
    /// Predicted maximum, percent of requested.
    pub p_max: u8,
    /// Predicted percentile, percent of requested.
    pub p_x: u8,
}

/// Per-resource, per-window predicted `(p_max, p_x)` for one VM.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindowProfile {
    window_hours: u32,
    percentile: Percentile,
    windows: [Vec<WindowPrediction>; 4],
}

impl TimeWindowProfile {
    pub fn new(
        window_hours: u32,
        percentile: Percentile,
        windows: [Vec<WindowPrediction>; 4],
    ) -> Result<Self, PredictError> {
        let n = windows_per_day(window_hours).ok_or(PredictError::WindowHours(window_hours))?;
        for (r, w) in Resource::ALL.iter().zip(&windows) {
            if w.len() != n {
                return Err(PredictError::InvalidProfile(format!("{r}: {} windows, expected {n}", w.len())));
            }
            for p in w {
                if p.p_x > p.p_max || p.p_max > 100 || p.p_max % BUCKET_PCT != 0 || p.p_x % BUCKET_PCT != 0 {
                    return Err(PredictError::InvalidProfile(format!("{r}: bad window prediction {p:?}")));
                }
            }
        }
        Ok(TimeWindowProfile { window_hours, percentile, windows })
    }

    /// Same prediction in every window.
    pub fn uniform(window_hours: u32, percentile: Percentile, p_max: u8, p_x: u8) -> Result<Self, PredictError> {
        let n = windows_per_day(window_hours).ok_or(PredictError::WindowHours(window_hours))?;
        let w = vec![WindowPrediction { p_max, p_x }; n];
        TimeWindowProfile::new(window_hours, percentile, [w.clone(), w.clone(), w.clone(), w])
    }

    pub fn window_hours(&self) -> u32 {
        self.window_hours
    }

    pub fn num_windows(&self) -> usize {
        self.windows[0].len()
    }

    pub fn percentile(&self) -> Percentile {
        self.percentile
    }

    pub fn windows(&self, r: Resource) -> &[WindowPrediction] {
        &self.windows[r.index()]
    }
}

/// Source of long-term profiles for the scheduler. `None` means there is not
/// enough history and the VM must be allocated in full.
pub trait UtilizationPredictor: Sync {
    fn window_hours(&self) -> u32;

    fn predict(&self, vm: &VmRecord, percentile: Percentile) -> Option<TimeWindowProfile>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Sort the raw values, take the nearest-rank order statistic, then round
    /// up to the bucket. Independent of the histogram path.
    fn oracle(values: &[f64], p: f64) -> u8 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        let mut rank = (p * n as f64 / 100.0).ceil() as usize;
        if rank == 0 {
            rank = 1;
        }
        let x = v[rank.min(n) - 1];
        let mut b = 0u8;
        while (b as f64) < x {
            b += 5;
        }
        b
    }

    #[test]
    fn bucket_rounding() {
        assert_eq!(bucket_ceil(0.0), 0);
        assert_eq!(bucket_ceil(17.3), 20);
        assert_eq!(bucket_ceil(20.0), 20);
        assert_eq!(bucket_ceil(72.0), 75);
        assert_eq!(bucket_ceil(100.0), 100);
        assert_eq!(bucket_ceil(130.0), 100);
    }

    #[test]
    fn quantile_of_range_rounds_up() {
        // 46 values 30, 31, ..., 75; Q95 is 73 -> bucket 75.
        let values: Vec<f64> = (30..=75).map(|v| v as f64).collect();
        let mut h = BucketHistogram::default();
        values.iter().for_each(|&v| h.add(v));
        assert_eq!(oracle(&values, 95.0), 75);
        assert_eq!(h.quantile(95), Some(75));
        assert_eq!(BucketHistogram::default().quantile(95), None);
    }

    #[test]
    fn profile_invariants_checked() {
        let ok = TimeWindowProfile::uniform(4, Percentile::P95, 40, 40).unwrap();
        assert_eq!(ok.num_windows(), 6);
        assert!(TimeWindowProfile::uniform(4, Percentile::P95, 40, 45).is_err());
        assert!(TimeWindowProfile::uniform(5, Percentile::P95, 40, 40).is_err());
        assert!(TimeWindowProfile::uniform(4, Percentile::P95, 42, 40).is_err());
        assert!(Percentile::new(49).is_err() && Percentile::new(100).is_err());
    }

    proptest! {
        #[test]
        fn histogram_quantile_matches_sort_oracle(
            values in prop::collection::vec(0.0f64..=100.0, 1..1000),
            p in 50u32..=99,
        ) {
            let mut h = BucketHistogram::default();
            values.iter().for_each(|&v| h.add(v));
            prop_assert_eq!(h.quantile(p), Some(oracle(&values, p as f64)));
        }

        #[test]
        fn quantile_invariant_under_duplication(
            values in prop::collection::vec(0.0f64..=100.0, 1..200),
            k in 1u64..5,
            p in 50u32..=99,
        ) {
            let mut once = BucketHistogram::default();
            let mut many = BucketHistogram::default();
            for &v in &values {
                once.add(v);
                many.add_bucket(bucket_ceil(v), k);
            }
            prop_assert_eq!(once.quantile(p), many.quantile(p));
        }
    }
}
