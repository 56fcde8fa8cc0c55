//! Offline placement: round-robin, longest-processing-time-first greedy,
//! greedy-with-migration, and partition-then-greedy.

use crate::model::{frac_int, Frac, VmRequest};
use crate::oracle::lower_bound_p0;
use crate::sched::{
    split_by_cm_bound, Action, Algorithm, ScheduleBuilder, ScheduleError, SchedulerConfig,
    SchedulerOutcome,
};
use crate::workload::WorkloadInstance;

/// Assigns requests to machines in rotation, skipping machines that cannot
/// host the request.
pub fn round_robin(instance: &WorkloadInstance) -> Result<SchedulerOutcome, ScheduleError> {
    super::schedule_offline(instance, &SchedulerConfig::new(Algorithm::RoundRobin))
}

/// Places requests in descending capacity-makespan order, each on the least
/// loaded machine that can host it.
pub fn lpt(instance: &WorkloadInstance) -> Result<SchedulerOutcome, ScheduleError> {
    super::schedule_offline(instance, &SchedulerConfig::new(Algorithm::Lpt))
}

/// Greedy placement followed by one migration pass that drains overloaded
/// machines toward the fleet average.
pub fn pmg(instance: &WorkloadInstance, factor: Frac) -> Result<SchedulerOutcome, ScheduleError> {
    let cfg = SchedulerConfig { pmg_factor: factor, ..SchedulerConfig::new(Algorithm::Pmg) };
    super::schedule_offline(instance, &cfg)
}

/// Partitions heavy requests against the fleet-average bound, then places
/// all resulting units greedily.
pub fn prepartition_off(
    instance: &WorkloadInstance,
    k: u32,
) -> Result<SchedulerOutcome, ScheduleError> {
    let cfg = SchedulerConfig { k, ..SchedulerConfig::new(Algorithm::PrepartitionOff) };
    super::schedule_offline(instance, &cfg)
}

pub(super) fn round_robin_into(
    builder: &mut ScheduleBuilder,
    instance: &WorkloadInstance,
) -> Result<(), ScheduleError> {
    let m = builder.pms.len();
    let mut cursor = 0usize;
    for request in &instance.requests {
        if m == 0 {
            return Err(ScheduleError::Infeasible { request: request.id });
        }
        let pm = (0..m)
            .map(|offset| (cursor + offset) % m)
            .find(|&pm| builder.pms[pm].can_place(request).is_ok())
            .ok_or(ScheduleError::Infeasible { request: request.id })?;
        builder.place(request, pm, request.start_slot, Action::Place)?;
        cursor = (pm + 1) % m;
    }
    Ok(())
}

/// Requests in descending capacity-makespan order (ties by id), preserving a
/// deterministic ordering for equal loads.
fn by_cm_desc(requests: &[VmRequest]) -> Vec<&VmRequest> {
    let mut order: Vec<&VmRequest> = requests.iter().collect();
    order.sort_by(|a, b| {
        b.capacity_makespan()
            .cmp(&a.capacity_makespan())
            .then(a.id.cmp(&b.id))
    });
    order
}

pub(super) fn lpt_into(
    builder: &mut ScheduleBuilder,
    instance: &WorkloadInstance,
) -> Result<(), ScheduleError> {
    for request in by_cm_desc(&instance.requests) {
        let pm = builder
            .min_cm_feasible(request)
            .ok_or(ScheduleError::Infeasible { request: request.id })?;
        builder.place(request, pm, request.start_slot, Action::Place)?;
    }
    Ok(())
}

pub(super) fn pmg_into(
    builder: &mut ScheduleBuilder,
    instance: &WorkloadInstance,
    factor: Frac,
) -> Result<(), ScheduleError> {
    lpt_into(builder, instance)?;
    pmg_rebalance(builder, factor)
}

/// The migration pass: machines above `(1 - factor) * avg` shed their
/// smallest units, which are then re-placed largest-first onto the least
/// loaded machines, preferring targets that stay below `(1 + factor) * avg`.
pub(super) fn pmg_rebalance(
    builder: &mut ScheduleBuilder,
    factor: Frac,
) -> Result<(), ScheduleError> {
    let active: Vec<usize> = (0..builder.pms.len())
        .filter(|&i| builder.pms[i].is_active())
        .collect();
    if active.is_empty() {
        return Ok(());
    }
    let total: Frac = active
        .iter()
        .map(|&i| builder.pms[i].capacity_makespan())
        .sum();
    let avg = total / frac_int(active.len() as i64);
    let low = (frac_int(1) - factor) * avg;
    let up = (frac_int(1) + factor) * avg;

    let mut evicted: Vec<(VmRequest, usize)> = Vec::new();
    for pm in 0..builder.pms.len() {
        while builder.pms[pm].capacity_makespan() > low {
            let lightest = builder.pms[pm]
                .assigned()
                .iter()
                .map(|(&id, _)| (builder.units_cm(id), id))
                .min();
            let Some((_, id)) = lightest else { break };
            evicted.push((builder.unassign(id)?, pm));
        }
    }

    evicted.sort_by(|(a, _), (b, _)| {
        b.capacity_makespan()
            .cmp(&a.capacity_makespan())
            .then(a.id.cmp(&b.id))
    });
    for (unit, source) in evicted {
        let order = builder.pms_by_load();
        let preferred = order.iter().copied().find(|&pm| {
            builder.pms[pm].can_place(&unit).is_ok()
                && builder.pms[pm].capacity_makespan() + unit.capacity_makespan() <= up
        });
        let pm = preferred
            .or_else(|| {
                order
                    .into_iter()
                    .find(|&pm| builder.pms[pm].can_place(&unit).is_ok())
            })
            .ok_or(ScheduleError::Infeasible { request: unit.id })?;
        if pm == source {
            // The unit landed back where it started; nothing migrated.
            builder.place_quiet(&unit, pm)?;
        } else {
            builder.place(&unit, pm, unit.start_slot, Action::Migrate)?;
        }
    }
    Ok(())
}

impl ScheduleBuilder {
    fn units_cm(&self, id: crate::model::VmId) -> Frac {
        self.units[&id].capacity_makespan()
    }
}

pub(super) fn prepartition_off_into(
    builder: &mut ScheduleBuilder,
    instance: &WorkloadInstance,
    k: u32,
) -> Result<(), ScheduleError> {
    let p0 = lower_bound_p0(instance);
    let bound = p0 / frac_int(k as i64);
    let mut units: Vec<VmRequest> = Vec::with_capacity(instance.requests.len());
    for request in &instance.requests {
        let split = if bound > frac_int(0) && request.capacity_makespan() >= bound {
            split_by_cm_bound(request, bound, || builder.fresh_id())
        } else {
            None
        };
        match split {
            Some(segments) => {
                builder.partition_count += segments.len() as u64;
                builder.record_split(request, request.start_slot);
                units.extend(segments);
            }
            None => units.push(request.clone()),
        }
    }
    units.sort_by(|a, b| {
        b.capacity_makespan()
            .cmp(&a.capacity_makespan())
            .then(a.origin_id.cmp(&b.origin_id))
            .then(a.start_slot.cmp(&b.start_slot))
    });
    for unit in &units {
        let pm = builder
            .min_cm_feasible(unit)
            .ok_or(ScheduleError::Infeasible { request: unit.id })?;
        builder.place(unit, pm, unit.start_slot, Action::Place)?;
    }
    Ok(())
}
