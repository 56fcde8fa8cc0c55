//! Load-balancing simulator for fixed-interval VM reservations on
//! shared-capacity physical machines.

pub mod engine;
pub mod model;
pub mod oracle;
pub mod metrics;
pub mod sched;
pub mod verify;
pub mod workload;
