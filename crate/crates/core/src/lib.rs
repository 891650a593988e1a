//! Temporal-pattern-based oversubscription for cloud VMs.
//!
//! The crate is organized along the pipeline an experiment runs through:
//!
//! * [`trace`]: the VM/utilization/server data model, CSV interchange and a
//!   seeded synthetic workload generator.
//! * [`characterize`]: resource-hours, stranding, peak/valley and
//!   time-window savings analyses over a trace.
//! * [`predict`]: per-time-window percentile profiles learned from group
//!   history, plus the short-horizon runtime predictors.
//! * [`hybrid`]: the guaranteed/oversubscribed split of a VM and the
//!   server-level pools and fit check.
//! * [`scheduler`]: event-driven placement under an oversubscription policy.
//! * [`simulate`]: 5-minute utilization replay with contention detection and
//!   trim/extend/migrate mitigation.
//! * [`report`] and [`experiment`]: summaries, manifests and the end-to-end
//!   driver used by the `oversub` binary.

pub mod characterize;
pub mod experiment;
pub mod hybrid;
pub mod predict;
pub mod report;
pub mod resource;
pub mod scheduler;
pub mod simulate;
pub mod trace;

pub use resource::{Resource, ResourceVector};
