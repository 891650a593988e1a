use std::collections::VecDeque;

use crate::trace::{Timestamp, DAY_SECS, STEP_SECS};

pub const DEFAULT_EWMA_ALPHA: f64 = 0.5;

/// Exponentially weighted moving average over monitor samples (percent).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ewma {
    alpha: f64,
    estimate: Option<f64>,
}

impl Default for Ewma {
    fn default() -> Self {
        Ewma::new(DEFAULT_EWMA_ALPHA)
    }
}

impl Ewma {
    /// `alpha` in (0, 1]. The first observation becomes the estimate.
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > 0.0 && alpha <= 1.0, "alpha {alpha} outside (0, 1]");
        Ewma { alpha, estimate: None }
    }

    pub fn with_estimate(alpha: f64, estimate: f64) -> Self {
        Ewma { estimate: Some(estimate.clamp(0.0, 100.0)), ..Ewma::new(alpha) }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn update(&mut self, obs: f64) -> f64 {
        let obs = obs.clamp(0.0, 100.0);
        let e = match self.estimate {
            None => obs,
            Some(e) => self.alpha * obs + (1.0 - self.alpha) * e,
        };
        self.estimate = Some(e);
        e
    }

    /// Prediction for the next monitor period.
    pub fn predict(&self) -> Option<f64> {
        self.estimate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HorizonForecast {
    /// Less than a day of history; callers fall back to reactive behaviour.
    NotReady,
    Ready(f64),
}

impl HorizonForecast {
    pub fn value(self) -> Option<f64> {
        match self {
            HorizonForecast::NotReady => None,
            HorizonForecast::Ready(v) => Some(v),
        }
    }
}

const SEASONAL_DAYS: i64 = 7;
const TREND_POINTS: usize = 5;

/// Five-minute-ahead forecaster: the larger of the seasonal maximum for the
/// upcoming interval (last seven days, hourly windows) and a least-squares
/// extrapolation of the last five 5-minute maxima.
#[derive(Debug, Clone)]
pub struct HorizonPredictor {
    window_secs: i64,
    first_obs: Option<Timestamp>,
    /// Per daily window: (day, max) for recent days, oldest first.
    seasonal: Vec<VecDeque<(i64, f64)>>,
    /// Last five (max, avg) 5-minute observations.
    recent: VecDeque<(f64, f64)>,
}

impl Default for HorizonPredictor {
    fn default() -> Self {
        HorizonPredictor::new(1)
    }
}

impl HorizonPredictor {
    pub fn new(window_hours: u32) -> Self {
        let windows = crate::trace::windows_per_day(window_hours)
            .unwrap_or_else(|| panic!("window length {window_hours}h does not divide a day"));
        HorizonPredictor {
            window_secs: window_hours as i64 * 3600,
            first_obs: None,
            seasonal: vec![VecDeque::new(); windows],
            recent: VecDeque::with_capacity(TREND_POINTS),
        }
    }

    fn slot(&self, ts: Timestamp) -> (i64, usize) {
        (ts.div_euclid(DAY_SECS), (ts.rem_euclid(DAY_SECS) / self.window_secs) as usize)
    }

    /// Records the 5-minute interval starting at `ts`.
    pub fn observe(&mut self, ts: Timestamp, max: f64, avg: f64) {
        let (max, avg) = (max.clamp(0.0, 100.0), avg.clamp(0.0, 100.0));
        self.first_obs.get_or_insert(ts);
        let (day, w) = self.slot(ts);
        let ring = &mut self.seasonal[w];
        match ring.back_mut() {
            Some((d, m)) if *d == day => *m = m.max(max),
            _ => ring.push_back((day, max)),
        }
        while ring.front().is_some_and(|&(d, _)| d <= day - SEASONAL_DAYS) {
            ring.pop_front();
        }
        if self.recent.len() == TREND_POINTS {
            self.recent.pop_front();
        }
        self.recent.push_back((max, avg));
    }

    pub fn recent(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.recent.iter().copied()
    }

    pub fn is_ready(&self, now: Timestamp) -> bool {
        self.first_obs.is_some_and(|f| now - f >= DAY_SECS)
    }

    /// Forecast of the maximum over `[now, now + 5 min)`.
    pub fn predict(&self, now: Timestamp) -> HorizonForecast {
        if !self.is_ready(now) {
            return HorizonForecast::NotReady;
        }
        let (day, w0) = self.slot(now);
        let (_, w1) = self.slot(now + STEP_SECS - 1);
        let mut seasonal: f64 = 0.0;
        for w in [w0, w1] {
            for &(d, m) in &self.seasonal[w] {
                if d > day - SEASONAL_DAYS {
                    seasonal = seasonal.max(m);
                }
            }
        }
        let trend = if self.recent.len() == TREND_POINTS {
            let ys: Vec<f64> = self.recent.iter().map(|&(m, _)| m).collect();
            extrapolate(&ys)
        } else {
            0.0
        };
        HorizonForecast::Ready(seasonal.max(trend).clamp(0.0, 100.0))
    }
}

/// Least-squares line through `(i, ys[i])`, evaluated at `x = ys.len()`.
fn extrapolate(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    my + slope * (n - mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ewma_step() {
        let mut e = Ewma::with_estimate(0.5, 40.0);
        assert_eq!(e.update(60.0), 50.0);
        let mut fresh = Ewma::default();
        assert_eq!(fresh.predict(), None);
        assert_eq!(fresh.update(30.0), 30.0);
    }

    #[test]
    fn ewma_converges_monotonically() {
        for start in [0.0, 100.0] {
            let mut e = Ewma::with_estimate(0.5, start);
            let mut prev = start;
            for _ in 0..60 {
                let v = e.update(42.0);
                assert!((v - 42.0).abs() <= (prev - 42.0f64).abs());
                prev = v;
            }
            assert!((prev - 42.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ewma_alternating_matches_closed_form() {
        // e_n = (1/2)^n e_0 + sum_k (1/2)^(n-k) x_k with x alternating 0, 100.
        let x = |k: usize| if k.is_multiple_of(2) { 0.0 } else { 100.0 };
        let mut e = Ewma::with_estimate(0.5, 50.0);
        for n in 0..200 {
            let steps = n as i32 + 1;
            let oracle = 0.5f64.powi(steps) * 50.0 + (0..=n).map(|k| 0.5f64.powi(steps - k as i32) * x(k)).sum::<f64>();
            assert!((e.update(x(n)) - oracle).abs() < 1e-9);
            if n >= 40 {
                // Two-cycle limits are 100/3 and 200/3.
                let limit = if n % 2 == 0 { 100.0 / 3.0 } else { 200.0 / 3.0 };
                assert!((oracle - limit).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn horizon_not_ready_before_a_day() {
        let mut h = HorizonPredictor::default();
        for s in 0..200 {
            h.observe(s * STEP_SECS, 30.0, 20.0);
        }
        assert_eq!(h.predict(200 * STEP_SECS), HorizonForecast::NotReady);
        assert_eq!(HorizonPredictor::default().predict(0), HorizonForecast::NotReady);
    }

    #[test]
    fn horizon_follows_daily_period() {
        let mut h = HorizonPredictor::default();
        let shape = |s: i64| if (s % 288) / 12 == 9 { 80.0 } else { 10.0 };
        for s in 0..(3 * 288) {
            h.observe(s * STEP_SECS, shape(s), shape(s) / 2.0);
        }
        // Day 3, 09:00 window.
        let now = 3 * DAY_SECS + 9 * 3600;
        assert_eq!(h.predict(now), HorizonForecast::Ready(80.0));
        assert_eq!(h.predict(now + 3 * 3600), HorizonForecast::Ready(10.0));
    }

    #[test]
    fn horizon_extrapolates_rising_trend() {
        let mut h = HorizonPredictor::default();
        for s in 0..288 {
            h.observe(s * STEP_SECS, 10.0, 5.0);
        }
        let base = 288 * STEP_SECS;
        for (i, v) in [10.0, 20.0, 30.0, 40.0, 50.0].into_iter().enumerate() {
            h.observe(base + i as i64 * STEP_SECS, v, v);
        }
        let f = h.predict(base + 5 * STEP_SECS).value().unwrap();
        assert!((f - 60.0).abs() < 1e-9, "{f}");
    }

    proptest! {
        #[test]
        fn ewma_stays_within_observed_range(obs in prop::collection::vec(0.0f64..=100.0, 1..200)) {
            let mut e = Ewma::default();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &x in &obs {
                lo = lo.min(x);
                hi = hi.max(x);
                let v = e.update(x);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }

        #[test]
        fn extrapolation_matches_normal_equations(ys in prop::collection::vec(0.0f64..100.0, 5)) {
            // Solve [n sx; sx sxx] [a b]' = [sy sxy]' directly.
            let (n, sx, sxx) = (5.0, 10.0, 30.0);
            let sy: f64 = ys.iter().sum();
            let sxy: f64 = ys.iter().enumerate().map(|(i, y)| i as f64 * y).sum();
            let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
            let a = (sy - b * sx) / n;
            prop_assert!((extrapolate(&ys) - (a + 5.0 * b)).abs() < 1e-9);
        }
    }
}
