use rayon::prelude::*;
use serde::Serialize;

use crate::characterize::Distribution;
use crate::resource::Resource;
use crate::scheduler::PlacementLog;
use crate::trace::{window_maxima, TraceSet};

/// Over- and under-allocation of one resource across VM window instances
/// (one VM, one day, one daily window).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceAllocationError {
    pub resource: Resource,
    pub window_instances: usize,
    /// Mean of `max(0, allocated - window peak) / requested`, in percent.
    pub mean_over_error_pct: f64,
    pub over_error_pct: Option<Distribution>,
    /// Window instances where some 5-minute sample exceeded the allocation.
    pub under_allocations: usize,
    pub under_allocation_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationErrorReport {
    pub all: Vec<ResourceAllocationError>,
    /// Only VMs whose allocation came from a prediction.
    pub predicted: Vec<ResourceAllocationError>,
}

impl AllocationErrorReport {
    pub fn predicted_for(&self, r: Resource) -> &ResourceAllocationError {
        &self.predicted[r.index()]
    }

    pub fn all_for(&self, r: Resource) -> &ResourceAllocationError {
        &self.all[r.index()]
    }
}

/// Compares each admitted VM's per-window allocation with the peak it
/// actually reached in every window instance of its lifetime.
pub fn allocation_error(log: &PlacementLog, trace: &TraceSet) -> AllocationErrorReport {
    let hours = 24 / log.windows() as u32;
    // (predicted, resource, over-error, under-allocated)
    let rows: Vec<(bool, usize, f64, bool)> = log
        .placements
        .par_iter()
        .flat_map_iter(|p| {
            let vm = &trace.vms()[p.vm_index];
            Resource::ALL.into_iter().flat_map(move |r| {
                let req = vm.requested[r];
                let series = trace.series(p.vm_index, r);
                window_maxima(series, hours).into_iter().filter(move |_| req > 0.0).map(move |wm| {
                    let allocated = p.allocation.window_amount(r, wm.window);
                    let peak = wm.max / 100.0 * req;
                    let over = (allocated - peak).max(0.0) / req * 100.0;
                    let under = peak > allocated * (1.0 + 1e-9) + 1e-9;
                    (p.predicted, r.index(), over, under)
                })
            })
        })
        .collect();

    let summarize = |predicted_only: bool| {
        Resource::ALL
            .into_iter()
            .map(|r| {
                let sel: Vec<&(bool, usize, f64, bool)> =
                    rows.iter().filter(|row| row.1 == r.index() && (row.0 || !predicted_only)).collect();
                let over: Vec<f64> = sel.iter().map(|row| row.2).collect();
                let under = sel.iter().filter(|row| row.3).count();
                let n = sel.len();
                ResourceAllocationError {
                    resource: r,
                    window_instances: n,
                    mean_over_error_pct: if n == 0 { 0.0 } else { over.iter().sum::<f64>() / n as f64 },
                    over_error_pct: Distribution::of(&over),
                    under_allocations: under,
                    under_allocation_rate_pct: if n == 0 { 0.0 } else { under as f64 / n as f64 * 100.0 },
                }
            })
            .collect()
    };
    AllocationErrorReport { all: summarize(false), predicted: summarize(true) }
}
