//! Post-run quality metrics: per-machine utilization, the imbalance degree
//! across machines, completion spans, and peak capacity-makespan.

use crate::model::{frac_int, frac_to_f64, Frac, PmState, Schedule};

/// Mean committed capacity over the machine's own busy window
/// `[earliest start, latest end)`. An idle machine reports 0.
pub fn pm_utilization(pm: &PmState) -> Frac {
    let Some((lo, hi)) = pm.busy_span() else {
        return frac_int(0);
    };
    let mut total = frac_int(0);
    for slot in lo..hi {
        total += pm.committed(slot);
    }
    total / frac_int((hi - lo) as i64)
}

/// Mean utilization over machines that host at least one request.
///
/// Aggregates across machines in floating point: each machine's exact
/// utilization has its busy-span length in the denominator, and the common
/// denominator of many near-coprime spans overflows machine integers on
/// long horizons.
pub fn avg_utilization(schedule: &Schedule) -> f64 {
    let active: Vec<f64> = active_utilizations(schedule);
    if active.is_empty() {
        return 0.0;
    }
    active.iter().sum::<f64>() / active.len() as f64
}

/// Population variance of per-machine utilization over active machines.
/// With a single capacity dimension the three per-resource deviation terms
/// coincide, so the imbalance degree reduces to exactly this variance.
/// Floating point, for the same reason as [`avg_utilization`].
pub fn imbalance_degree(schedule: &Schedule) -> f64 {
    imbalance_of(&active_utilizations(schedule))
}

fn active_utilizations(schedule: &Schedule) -> Vec<f64> {
    schedule
        .pms
        .iter()
        .filter(|pm| pm.is_active())
        .map(|pm| frac_to_f64(pm_utilization(pm)))
        .collect()
}

fn imbalance_of(utils: &[f64]) -> f64 {
    if utils.is_empty() {
        return 0.0;
    }
    let n = utils.len() as f64;
    let mean = utils.iter().sum::<f64>() / n;
    utils.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / n
}

/// Longest per-machine completion span: max over machines of
/// (latest end - earliest start) of its assigned requests.
pub fn makespan_slots(schedule: &Schedule) -> u64 {
    schedule
        .pms
        .iter()
        .filter_map(|pm| pm.busy_span())
        .map(|(lo, hi)| hi - lo)
        .max()
        .unwrap_or(0)
}

/// Peak capacity-makespan across machines, the balancing objective.
pub fn cm_max(schedule: &Schedule) -> Frac {
    schedule.cm_max()
}

/// Imbalance degree over growing prefixes `[0, t)`, sampled every `step`
/// slots plus a final sample at the last busy slot. Machines whose first
/// request starts at or after `t` are not yet active and are excluded; each
/// active machine's utilization window is clipped to the prefix.
pub fn imbalance_series(schedule: &Schedule, step: u64) -> Vec<(u64, f64)> {
    assert!(step >= 1, "sampling step must be at least one slot");
    let end = schedule.pms.iter().filter_map(|pm| pm.busy_span()).map(|(_, hi)| hi).max();
    let Some(end) = end else {
        return Vec::new();
    };
    let mut samples = Vec::new();
    let mut t = step;
    while t < end {
        samples.push((t, prefix_imbalance(schedule, t)));
        t += step;
    }
    samples.push((end, prefix_imbalance(schedule, end)));
    samples
}

fn prefix_imbalance(schedule: &Schedule, t: u64) -> f64 {
    let mut utils = Vec::new();
    for pm in &schedule.pms {
        let Some((lo, hi)) = pm.busy_span() else {
            continue;
        };
        if lo >= t {
            continue;
        }
        let hi = hi.min(t);
        let mut total = frac_int(0);
        for slot in lo..hi {
            total += pm.committed(slot);
        }
        utils.push(frac_to_f64(total / frac_int((hi - lo) as i64)));
    }
    imbalance_of(&utils)
}

/// Summary of one run, one row of the comparison CSV.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub avg_utilization: f64,
    pub imbalance_degree: f64,
    pub makespan_slots: u64,
    pub cm_max: Frac,
    pub per_pm_cm: Vec<Frac>,
    pub partition_count: u64,
    pub wall_time_ms: f64,
}

pub const CSV_HEADER: &str =
    "algorithm,n_vms,k_or_f,avg_utilization,imd,makespan_slots,cm_max,partitions,wall_time_ms";

impl MetricReport {
    pub fn from_schedule(schedule: &Schedule, wall_time_ms: f64) -> Self {
        MetricReport {
            avg_utilization: avg_utilization(schedule),
            imbalance_degree: imbalance_degree(schedule),
            makespan_slots: makespan_slots(schedule),
            cm_max: cm_max(schedule),
            per_pm_cm: schedule.pms.iter().map(|pm| pm.capacity_makespan()).collect(),
            partition_count: schedule.partition_count,
            wall_time_ms,
        }
    }

    pub fn csv_row(&self, algorithm: &str, n_vms: usize, k_or_f: &str) -> String {
        format!(
            "{algorithm},{n_vms},{k_or_f},{:.6},{:.6},{},{:.6},{},{:.3}",
            self.avg_utilization,
            self.imbalance_degree,
            self.makespan_slots,
            frac_to_f64(self.cm_max),
            self.partition_count,
            self.wall_time_ms,
        )
    }
}
