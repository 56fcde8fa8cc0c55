//! Arrival-driven simulation: reveals requests slot by slot and feeds them to
//! an online placement policy, which may re-queue pieces of a request for
//! later slots.

use std::collections::BTreeMap;

use crate::model::{frac_int, Frac, VmId, VmRequest};
use crate::sched::online;
use crate::sched::{ScheduleBuilder, ScheduleError, SchedulerConfig, SchedulerOutcome};
use crate::workload::WorkloadInstance;

/// Running totals over the requests revealed so far. Only original arrivals
/// feed these; pieces re-queued by a policy never count twice.
#[derive(Debug, Clone, Default)]
pub struct ArrivalStats {
    pub arrived_origins: u64,
    pub sum_cm: Frac,
    pub max_cm: Frac,
}

impl ArrivalStats {
    pub fn observe(&mut self, request: &VmRequest) {
        debug_assert_eq!(request.id, request.origin_id, "only origins feed arrival stats");
        self.arrived_origins += 1;
        let cm = request.capacity_makespan();
        self.sum_cm += cm;
        if cm > self.max_cm {
            self.max_cm = cm;
        }
    }

    /// Load level no schedule over the revealed requests can beat: the larger
    /// of "heaviest request spread over two machines" and "total load spread
    /// over all machines" never exceeds it, and it never decreases as more
    /// requests arrive.
    pub fn dynamic_balance_bound(&self, machines: usize) -> Frac {
        if self.arrived_origins == 0 || machines == 0 {
            return frac_int(0);
        }
        let per_pair = self.max_cm / frac_int(2);
        let per_machine = self.sum_cm / frac_int(machines as i64);
        per_pair.min(per_machine)
    }
}

/// An online placement policy. Called once per pending item in arrival
/// order; may place the item through the builder and/or return replacement
/// items to be processed at their own start slots.
pub(crate) trait OnlineScheduler {
    fn on_item(
        &mut self,
        item: &VmRequest,
        now: u64,
        stats: &ArrivalStats,
        builder: &mut ScheduleBuilder,
    ) -> Result<Vec<VmRequest>, ScheduleError>;
}

/// Runs an online algorithm over the instance's arrival sequence.
///
/// Within a slot, every arrival is revealed (and counted into the stats)
/// before the first placement decision, then items are dispatched in id
/// order. Re-queued items join the queue at their own start slots.
pub fn run_online(
    instance: &WorkloadInstance,
    cfg: &SchedulerConfig,
) -> Result<SchedulerOutcome, ScheduleError> {
    cfg.validate()?;
    let mut scheduler = online::make_scheduler(cfg, instance)?;
    let mut builder = ScheduleBuilder::new(instance);
    let mut stats = ArrivalStats::default();
    let mut pending: BTreeMap<(u64, VmId), VmRequest> = instance
        .requests
        .iter()
        .map(|r| ((r.start_slot, r.id), r.clone()))
        .collect();

    while let Some((&(now, _), _)) = pending.first_key_value() {
        let arrivals: Vec<VmRequest> = pending
            .range((now, 0)..=(now, VmId::MAX))
            .map(|(_, r)| r.clone())
            .filter(|r| r.id == r.origin_id)
            .collect();
        for origin in &arrivals {
            stats.observe(origin);
        }
        while let Some(entry) = pending.first_entry() {
            if entry.key().0 != now {
                break;
            }
            let item = entry.remove();
            let requeued = scheduler.on_item(&item, now, &stats, &mut builder)?;
            for piece in requeued {
                debug_assert!(piece.start_slot >= now, "re-queued item must not start in the past");
                pending.insert((piece.start_slot, piece.id), piece);
            }
        }
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{frac, PmSpec, PmType};
    use crate::sched::{Action, Algorithm};
    use crate::workload::{Provenance, WorkloadInstance};

    fn instance(requests: Vec<VmRequest>, pms: usize) -> WorkloadInstance {
        let pool = vec![PmSpec::catalog(PmType::Type1); pms];
        WorkloadInstance::assemble(requests, pool, 5, None, Provenance::Trace("test".into()))
            .unwrap()
    }

    #[test]
    fn balance_bound_takes_the_smaller_of_pair_and_average() {
        let mut stats = ArrivalStats::default();
        assert_eq!(stats.dynamic_balance_bound(4), frac_int(0));
        stats.observe(&VmRequest::new(1, 0, 16, frac(1, 4)).unwrap()); // cm 4
        assert_eq!(stats.dynamic_balance_bound(2), frac_int(2));
        stats.observe(&VmRequest::new(2, 0, 16, frac(1, 2)).unwrap()); // cm 8
        // max/2 = 4, sum/m = 6 -> 4.
        assert_eq!(stats.dynamic_balance_bound(2), frac_int(4));
        // More machines: sum/m = 3 < 4.
        assert_eq!(stats.dynamic_balance_bound(4), frac_int(3));
    }

    #[test]
    fn balance_bound_never_decreases_as_arrivals_accumulate() {
        let mut stats = ArrivalStats::default();
        let mut last = frac_int(0);
        let mut revealed: Vec<VmRequest> = Vec::new();
        for i in 0..20u64 {
            let dur = 1 + (i * 7) % 13;
            let frac_idx = [frac(1, 16), frac(1, 8), frac(1, 4), frac(1, 2)][(i % 4) as usize];
            let r = VmRequest::new(i + 1, i, i + dur, frac_idx).unwrap();
            stats.observe(&r);
            revealed.push(r);
            let bound = stats.dynamic_balance_bound(3);
            assert!(bound >= last, "bound fell from {last} to {bound}");
            last = bound;
            // Incrementally maintained stats equal recomputation from the
            // revealed set.
            let sum: Frac = revealed.iter().map(|r| r.capacity_makespan()).sum();
            let max = revealed.iter().map(|r| r.capacity_makespan()).max().unwrap();
            assert_eq!(stats.sum_cm, sum);
            assert_eq!(stats.max_cm, max);
            assert_eq!(stats.arrived_origins, revealed.len() as u64);
        }
    }

    #[test]
    fn empty_instance_yields_an_empty_schedule() {
        let inst = instance(vec![], 2);
        let out = run_online(&inst, &SchedulerConfig::new(Algorithm::Olrsa)).unwrap();
        assert!(out.schedule.units.is_empty());
        assert!(out.decisions_log.is_empty());
        assert_eq!(out.schedule.cm_max(), frac_int(0));
    }

    #[test]
    fn items_dispatch_in_slot_then_id_order() {
        let origins = vec![
            VmRequest::new(5, 0, 4, frac(1, 16)).unwrap(),
            VmRequest::new(2, 0, 4, frac(1, 16)).unwrap(),
            VmRequest::new(9, 2, 6, frac(1, 16)).unwrap(),
            VmRequest::new(1, 2, 6, frac(1, 16)).unwrap(),
        ];
        let inst = instance(origins, 2);
        let out = run_online(&inst, &SchedulerConfig::new(Algorithm::Olrsa)).unwrap();
        let seen: Vec<(u64, VmId)> = out
            .decisions_log
            .iter()
            .map(|d| (d.slot, d.request_id))
            .collect();
        assert_eq!(seen, vec![(0, 2), (0, 5), (2, 1), (2, 9)]);
    }

    #[test]
    fn same_slot_arrivals_are_all_revealed_before_the_first_decision() {
        // Two arrivals at slot 0 with loads 4 and 10 on two machines. With
        // both revealed up front the balance bound is min(10/2, 14/2) = 5,
        // so the first item (load 4) stays whole. Revealing one at a time
        // would give bound 2 and split it.
        let origins = vec![
            VmRequest::new(1, 0, 16, frac(1, 4)).unwrap(),  // cm 4
            VmRequest::new(2, 0, 20, frac(1, 2)).unwrap(),  // cm 10
        ];
        let inst = instance(origins.clone(), 2);
        let cfg = SchedulerConfig { k: 1, ..SchedulerConfig::new(Algorithm::PrepartitionOn1) };
        let out = run_online(&inst, &cfg).unwrap();
        let split_origins: Vec<VmId> = out
            .decisions_log
            .iter()
            .filter(|d| d.action == Action::Split)
            .map(|d| d.origin_id)
            .collect();
        assert_eq!(split_origins, vec![2], "only the heavy arrival should split");
        assert_eq!(out.schedule.segments[&1].len(), 1);
        out.schedule.audit(&origins).unwrap();
    }

    #[test]
    fn decisions_never_precede_their_requests_arrival() {
        let origins = vec![
            VmRequest::new(1, 3, 10, frac(1, 4)).unwrap(),
            VmRequest::new(2, 0, 30, frac(1, 2)).unwrap(),
            VmRequest::new(3, 7, 9, frac(1, 8)).unwrap(),
        ];
        let inst = instance(origins.clone(), 2);
        for algorithm in [Algorithm::Olrsa, Algorithm::PrepartitionOn1, Algorithm::PrepartitionOn2]
        {
            let cfg = SchedulerConfig::new(algorithm);
            let out = run_online(&inst, &cfg).unwrap();
            let arrival_of = |origin: VmId| origins.iter().find(|r| r.id == origin).unwrap().start_slot;
            for d in &out.decisions_log {
                assert!(
                    d.slot >= arrival_of(d.origin_id),
                    "{algorithm}: decision at slot {} precedes arrival {}",
                    d.slot,
                    arrival_of(d.origin_id)
                );
                if let Some(unit) = out.schedule.units.get(&d.request_id) {
                    assert!(d.slot <= unit.start_slot, "decision must not postdate the unit's start");
                }
            }
            out.schedule.audit(&origins).unwrap();
        }
    }

    #[test]
    fn online_driver_rejects_offline_algorithms() {
        let inst = instance(vec![], 1);
        let cfg = SchedulerConfig::new(Algorithm::Lpt);
        assert!(matches!(
            run_online(&inst, &cfg),
            Err(ScheduleError::InvalidConfig(_))
        ));
    }
}
