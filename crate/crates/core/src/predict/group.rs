use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BucketHistogram, Percentile, PredictError, TimeWindowProfile, UtilizationPredictor, WindowPrediction};
use crate::resource::Resource;
use crate::trace::{window_maxima, windows_per_day, Timestamp, TraceSet, VmRecord};

/// Grouping key. Either field may be absent for the fallback levels.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub subscription: Option<String>,
    pub config: Option<String>,
}

impl GroupKey {
    /// Lookup order for a VM: (subscription, config), subscription, config.
    pub fn chain(vm: &VmRecord) -> [GroupKey; 3] {
        [
            GroupKey { subscription: Some(vm.subscription_id.clone()), config: Some(vm.vm_config.clone()) },
            GroupKey { subscription: Some(vm.subscription_id.clone()), config: None },
            GroupKey { subscription: None, config: Some(vm.vm_config.clone()) },
        ]
    }
}

/// Histograms of the window maxima of every VM in a group, per resource and
/// per daily window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupHistory {
    pub vm_count: usize,
    histograms: [Vec<BucketHistogram>; 4],
}

impl GroupHistory {
    fn empty(windows: usize) -> Self {
        let h = vec![BucketHistogram::default(); windows];
        GroupHistory { vm_count: 0, histograms: [h.clone(), h.clone(), h.clone(), h] }
    }

    fn merge(&mut self, other: &GroupHistory) {
        self.vm_count += other.vm_count;
        for (mine, theirs) in self.histograms.iter_mut().zip(&other.histograms) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
    }

    pub fn histogram(&self, r: Resource, window: usize) -> &BucketHistogram {
        &self.histograms[r.index()][window]
    }

    fn profile(&self, window_hours: u32, percentile: Percentile) -> TimeWindowProfile {
        let windows = Resource::ALL.map(|r| {
            let hs = &self.histograms[r.index()];
            // A window no group VM was ever alive in borrows the pooled
            // histogram of the resource.
            let mut pooled = BucketHistogram::default();
            hs.iter().for_each(|h| pooled.merge(h));
            hs.iter()
                .map(|h| {
                    let h = if h.total() > 0 { h } else { &pooled };
                    WindowPrediction {
                        p_max: h.quantile(99).unwrap_or(100),
                        p_x: h.quantile(percentile.get() as u32).unwrap_or(100),
                    }
                })
                .collect::<Vec<_>>()
        });
        TimeWindowProfile::new(window_hours, percentile, windows).expect("quantiles are valid buckets")
    }
}

/// Group-history percentile predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupModel {
    window_hours: u32,
    min_group_size: usize,
    training_range: Option<(Timestamp, Timestamp)>,
    groups: BTreeMap<GroupKey, GroupHistory>,
}

impl GroupModel {
    pub fn window_hours(&self) -> u32 {
        self.window_hours
    }

    pub fn min_group_size(&self) -> usize {
        self.min_group_size
    }

    pub fn training_range(&self) -> Option<(Timestamp, Timestamp)> {
        self.training_range
    }

    pub fn group(&self, key: &GroupKey) -> Option<&GroupHistory> {
        self.groups.get(key)
    }

    pub fn groups(&self) -> impl Iterator<Item = (&GroupKey, &GroupHistory)> {
        self.groups.iter()
    }

    /// First group in the fallback chain that has enough history.
    pub fn lookup(&self, vm: &VmRecord) -> Option<(GroupKey, &GroupHistory)> {
        GroupKey::chain(vm).into_iter().find_map(|k| self.groups.get(&k).map(|g| (k, g)))
    }

    pub fn predict_profile(&self, vm: &VmRecord, percentile: Percentile) -> Option<TimeWindowProfile> {
        self.lookup(vm).map(|(_, g)| g.profile(self.window_hours, percentile))
    }
}

impl UtilizationPredictor for GroupModel {
    fn window_hours(&self) -> u32 {
        self.window_hours
    }

    fn predict(&self, vm: &VmRecord, percentile: Percentile) -> Option<TimeWindowProfile> {
        self.predict_profile(vm, percentile)
    }
}

/// Builds per-group histograms of every history VM's window maxima. Groups
/// with fewer than `min_group_size` distinct VMs are dropped.
pub fn train_group_model(
    history: &TraceSet,
    window_hours: u32,
    min_group_size: usize,
) -> Result<GroupModel, PredictError> {
    let windows = windows_per_day(window_hours).ok_or(PredictError::WindowHours(window_hours))?;

    let per_vm: Vec<GroupHistory> = (0..history.len())
        .into_par_iter()
        .map(|i| {
            let mut g = GroupHistory::empty(windows);
            g.vm_count = 1;
            for r in Resource::ALL {
                for wm in window_maxima(history.series(i, r), window_hours) {
                    g.histograms[r.index()][wm.window].add(wm.max);
                }
            }
            g
        })
        .collect();

    let mut groups: BTreeMap<GroupKey, GroupHistory> = BTreeMap::new();
    for (vm, g) in history.vms().iter().zip(&per_vm) {
        for key in GroupKey::chain(vm) {
            groups.entry(key).or_insert_with(|| GroupHistory::empty(windows)).merge(g);
        }
    }
    // vm_ids are unique in a TraceSet, so vm_count counts distinct VMs.
    groups.retain(|_, g| g.vm_count >= min_group_size.max(1));

    Ok(GroupModel { window_hours, min_group_size, training_range: history.time_range(), groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::ResourceVector;
    use crate::trace::{Offering, UtilizationSeries, DAY_SECS, STEP_SECS};

    fn vm(id: &str, sub: &str, cfg: &str, start: Timestamp, values: Vec<f32>) -> (VmRecord, [UtilizationSeries; 4]) {
        let vm = VmRecord {
            vm_id: id.into(),
            subscription_id: sub.into(),
            vm_config: cfg.into(),
            requested: ResourceVector::new(4.0, 16.0, 2.0, 64.0),
            start,
            end: start + values.len() as i64 * STEP_SECS,
            offering: Offering::Iaas,
        };
        let series = Resource::ALL.map(|r| UtilizationSeries::new(id, r, start, values.clone()));
        (vm, series)
    }

    fn trace(vms: Vec<(VmRecord, [UtilizationSeries; 4])>) -> TraceSet {
        let (v, s) = vms.into_iter().unzip();
        TraceSet::new(v, s, vec![]).unwrap()
    }

    fn query(sub: &str, cfg: &str) -> VmRecord {
        vm("q", sub, cfg, 0, vec![0.0]).0
    }

    #[test]
    fn flat_group_predicts_its_level() {
        let steps = 288;
        let t = trace((0..10).map(|i| vm(&format!("v{i}"), "s", "D4", 0, vec![40.0; steps])).collect());
        let m = train_group_model(&t, 4, 5).unwrap();
        let g = m.group(&GroupKey { subscription: Some("s".into()), config: Some("D4".into()) }).unwrap();
        assert_eq!(g.vm_count, 10);
        for w in 0..6 {
            let h = g.histogram(Resource::Mem, w);
            assert_eq!(h.counts().find(|&(_, c)| c > 0), Some((40, 10)));
            assert_eq!(h.total(), 10);
        }
        let p = m.predict_profile(&query("s", "D4"), Percentile::P95).unwrap();
        for r in Resource::ALL {
            assert!(p.windows(r).iter().all(|w| w.p_max == 40 && w.p_x == 40));
        }
    }

    #[test]
    fn small_group_falls_back() {
        let mut vms: Vec<_> = (0..4).map(|i| vm(&format!("a{i}"), "s", "D4", 0, vec![80.0; 12])).collect();
        vms.extend((0..6).map(|i| vm(&format!("b{i}"), "other", "D4", 0, vec![20.0; 12])));
        let m = train_group_model(&trace(vms), 4, 5).unwrap();
        assert!(m.group(&GroupKey { subscription: Some("s".into()), config: Some("D4".into()) }).is_none());
        // sub-only "s" also has 4 VMs; config-only D4 has all 10.
        let (key, g) = m.lookup(&query("s", "D4")).unwrap();
        assert_eq!(key, GroupKey { subscription: None, config: Some("D4".into()) });
        assert_eq!(g.vm_count, 10);
        assert!(m.predict_profile(&query("nobody", "E8"), Percentile::P95).is_none());
    }

    #[test]
    fn range_rounds_up_to_bucket() {
        // One sample each at 30, 31, ..., 75 in window 0.
        let vms = (30..=75).map(|u| vm(&format!("v{u}"), "s", "D4", 0, vec![u as f32])).collect();
        let m = train_group_model(&trace(vms), 24, 5).unwrap();
        let p = m.predict_profile(&query("s", "D4"), Percentile::P95).unwrap();
        assert_eq!(p.windows(Resource::Cpu)[0], WindowPrediction { p_max: 75, p_x: 75 });
        let p50 = m.predict_profile(&query("s", "D4"), Percentile::P50).unwrap();
        // Q50 of 46 values is the 23rd: 52 -> 55.
        assert_eq!(p50.windows(Resource::Cpu)[0].p_x, 55);
    }

    #[test]
    fn per_window_profile_follows_diurnal_shape() {
        // Peak 70 in window 2 (8-12h), 20 elsewhere, two days per VM.
        let day: Vec<f32> = (0..288).map(|s| if (96..144).contains(&s) { 70.0 } else { 20.0 }).collect();
        let two: Vec<f32> = day.iter().chain(&day).copied().collect();
        let vms = (0..6).map(|i| vm(&format!("v{i}"), "s", "D4", DAY_SECS, two.clone())).collect();
        let m = train_group_model(&trace(vms), 4, 5).unwrap();
        let p = m.predict_profile(&query("s", "D4"), Percentile::P95).unwrap();
        let px: Vec<u8> = p.windows(Resource::Cpu).iter().map(|w| w.p_x).collect();
        assert_eq!(px, vec![20, 20, 70, 20, 20, 20]);
    }

    #[test]
    fn rejects_bad_window_length() {
        let t = trace(vec![vm("a", "s", "D4", 0, vec![1.0])]);
        assert_eq!(train_group_model(&t, 7, 5).unwrap_err(), PredictError::WindowHours(7));
    }
}
