//! Online placement policies: uniform-random fit, least-loaded fit, and the
//! two arrival-time partitioners (threshold-splitting and equal-splitting).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{ArrivalStats, OnlineScheduler};
use crate::model::{frac_int, Frac, PmId, VmRequest};
use crate::sched::{
    split_by_cm_bound, split_equal_parts, Action, Algorithm, ScheduleBuilder, ScheduleError,
    SchedulerConfig,
};
use crate::workload::WorkloadInstance;

pub(crate) fn make_scheduler(
    cfg: &SchedulerConfig,
    instance: &WorkloadInstance,
) -> Result<Box<dyn OnlineScheduler>, ScheduleError> {
    match cfg.algorithm {
        Algorithm::Random => Ok(Box::new(RandomFit::new(cfg.seed))),
        Algorithm::Olrsa => Ok(Box::new(LeastLoadedFit)),
        Algorithm::PrepartitionOn1 => Ok(Box::new(ThresholdPartitioner { k: cfg.k })),
        Algorithm::PrepartitionOn2 => Ok(Box::new(EqualPartitioner {
            f: cfg.f,
            cm_bound: cfg.resolved_cm_bound(&instance.slot_config),
        })),
        offline => Err(ScheduleError::InvalidConfig(format!(
            "{offline} is an offline algorithm; it runs through the batch driver"
        ))),
    }
}

/// Places each arrival on a machine drawn uniformly from those that can
/// host it.
struct RandomFit {
    rng: ChaCha8Rng,
}

impl RandomFit {
    fn new(seed: u64) -> Self {
        RandomFit { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl OnlineScheduler for RandomFit {
    fn on_item(
        &mut self,
        item: &VmRequest,
        now: u64,
        _stats: &ArrivalStats,
        builder: &mut ScheduleBuilder,
    ) -> Result<Vec<VmRequest>, ScheduleError> {
        let feasible: Vec<PmId> = (0..builder.pms.len())
            .filter(|&pm| builder.pms[pm].can_place(item).is_ok())
            .collect();
        if feasible.is_empty() {
            return Err(ScheduleError::Infeasible { request: item.id });
        }
        let pm = feasible[self.rng.gen_range(0..feasible.len())];
        builder.place(item, pm, now, Action::Place)?;
        Ok(Vec::new())
    }
}

/// Places each arrival whole on the least loaded machine that can host it.
struct LeastLoadedFit;

impl OnlineScheduler for LeastLoadedFit {
    fn on_item(
        &mut self,
        item: &VmRequest,
        now: u64,
        _stats: &ArrivalStats,
        builder: &mut ScheduleBuilder,
    ) -> Result<Vec<VmRequest>, ScheduleError> {
        let pm = builder
            .min_cm_feasible(item)
            .ok_or(ScheduleError::Infeasible { request: item.id })?;
        builder.place(item, pm, now, Action::Place)?;
        Ok(Vec::new())
    }
}

/// Splits any arrival whose load exceeds a 1/k share of the running balance
/// bound into bound-sized segments; segments rejoin the queue at their own
/// start slots and whatever fits is placed least-loaded-first.
struct ThresholdPartitioner {
    k: u32,
}

impl OnlineScheduler for ThresholdPartitioner {
    fn on_item(
        &mut self,
        item: &VmRequest,
        now: u64,
        stats: &ArrivalStats,
        builder: &mut ScheduleBuilder,
    ) -> Result<Vec<VmRequest>, ScheduleError> {
        let balance = stats.dynamic_balance_bound(builder.pms.len());
        let bound = balance / frac_int(self.k as i64);
        let cm = item.capacity_makespan();
        if bound > frac_int(0) && cm > bound && item.duration_slots() >= 2 {
            let segments = split_by_cm_bound(item, bound, || builder.fresh_id())
                .expect("a request heavier than the bound always splits");
            let shares = (cm * frac_int(self.k as i64) / balance).ceil().to_integer();
            builder.partition_count += shares as u64;
            builder.record_split(item, now);
            return Ok(segments);
        }
        let pm = builder
            .min_cm_feasible(item)
            .ok_or(ScheduleError::Infeasible { request: item.id })?;
        builder.place(item, pm, now, Action::Place)?;
        Ok(Vec::new())
    }
}

/// Splits a triggering arrival evenly across the compatible machines,
/// sending each segment to the next least loaded one. Triggers are a
/// per-machine load budget and a (1 + f) imbalance ratio against the load
/// the fleet would have after placing the arrival whole.
struct EqualPartitioner {
    f: Frac,
    cm_bound: Frac,
}

impl OnlineScheduler for EqualPartitioner {
    fn on_item(
        &mut self,
        item: &VmRequest,
        now: u64,
        _stats: &ArrivalStats,
        builder: &mut ScheduleBuilder,
    ) -> Result<Vec<VmRequest>, ScheduleError> {
        // Machines the request may run on at all (resource-family match);
        // capacity over the request's own slots is checked per placement.
        let compatible: Vec<PmId> = (0..builder.pms.len())
            .filter(|&pm| match item.pm_family {
                Some(family) => builder.pms[pm].spec.pm_type == family,
                None => true,
            })
            .collect();
        if compatible.is_empty() {
            return Err(ScheduleError::Infeasible { request: item.id });
        }
        let mut by_load = compatible.clone();
        by_load.sort_by_key(|&pm| (builder.pms[pm].capacity_makespan(), pm));
        let target = by_load
            .iter()
            .copied()
            .find(|&pm| builder.pms[pm].can_place(item).is_ok());

        let triggered = match target {
            None => true,
            Some(pm) => {
                let loaded = builder.pms[pm].capacity_makespan() + item.capacity_makespan();
                let new_min = by_load
                    .iter()
                    .filter(|&&other| other != pm)
                    .map(|&other| builder.pms[other].capacity_makespan())
                    .chain(std::iter::once(loaded))
                    .min()
                    .expect("at least the loaded machine itself");
                loaded > self.cm_bound || loaded > (frac_int(1) + self.f) * new_min
            }
        };

        if !triggered {
            let pm = target.expect("an untriggered arrival has a feasible machine");
            builder.place(item, pm, now, Action::Place)?;
            return Ok(Vec::new());
        }

        let parts = (compatible.len() as u64).min(item.duration_slots());
        if parts <= 1 {
            let pm = target.ok_or(ScheduleError::Infeasible { request: item.id })?;
            builder.place(item, pm, now, Action::Place)?;
            return Ok(Vec::new());
        }
        let segments = split_equal_parts(item, parts, || builder.fresh_id());
        builder.partition_count += segments.len() as u64;
        builder.record_split(item, now);
        for (i, segment) in segments.iter().enumerate() {
            let preferred = by_load[i];
            let pm = if builder.pms[preferred].can_place(segment).is_ok() {
                preferred
            } else {
                builder
                    .min_cm_feasible(segment)
                    .ok_or(ScheduleError::Infeasible { request: segment.id })?
            };
            builder.place(segment, pm, now, Action::Place)?;
        }
        Ok(Vec::new())
    }
}
