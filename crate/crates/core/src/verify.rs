//! Oracle-backed verification: random capacity-slack instances small enough
//! for exact search, bound checks of every algorithm with a proven ratio,
//! and an independent replay of the equal-partitioner's decision log.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::run_online;
use crate::model::{frac, frac_int, Frac, PmSpec, PmType, Schedule, VmRequest};
use crate::oracle::{lower_bound_p0, solve_exact, OracleError, OracleLimits};
use crate::sched::{
    schedule_offline, Action, Algorithm, Decision, ScheduleError, SchedulerConfig,
    SchedulerOutcome,
};
use crate::workload::{Provenance, WorkloadInstance};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("decision-log replay failed: {0}")]
    Replay(String),
}

/// One verified inequality: an algorithm's achieved peak load against the
/// bound its theory promises on this instance.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub seed: u64,
    pub label: String,
    pub achieved: Frac,
    pub limit: Frac,
    pub opt: Frac,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.achieved <= self.limit
    }

    /// achieved / opt, for reporting the worst observed ratio.
    pub fn ratio(&self) -> f64 {
        let a = *self.achieved.numer() as f64 / *self.achieved.denom() as f64;
        let o = *self.opt.numer() as f64 / *self.opt.denom() as f64;
        if o == 0.0 {
            1.0
        } else {
            a / o
        }
    }
}

/// A deterministic instance on which per-slot capacity can never bind:
/// at most 8 requests of fraction at most 1/8, so even a single machine
/// could hold every request in every slot. On these instances the greedy
/// bounds below are theorems, not tendencies.
pub fn slack_instance(seed: u64) -> WorkloadInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=8usize);
    let m = rng.gen_range(2..=3usize);
    let fractions = [frac(1, 16), frac(1, 8)];
    let requests: Vec<VmRequest> = (0..n)
        .map(|i| {
            let start = rng.gen_range(0..=10u64);
            let duration = rng.gen_range(1..=20u64);
            let fraction = fractions[rng.gen_range(0..fractions.len())];
            VmRequest::new(i as u64 + 1, start, start + duration, fraction)
                .expect("slack request parameters are valid")
        })
        .collect();
    let pool = vec![PmSpec::catalog(PmType::Type1); m];
    WorkloadInstance::assemble(requests, pool, 5, None, Provenance::Trace(format!("slack-{seed}")))
        .expect("slack instance assembles")
}

fn max_fraction(instance: &WorkloadInstance) -> Frac {
    instance
        .requests
        .iter()
        .map(|r| r.capacity_fraction)
        .max()
        .unwrap_or_else(|| frac_int(0))
}

/// Runs every bound-carrying algorithm on `count` seeded slack instances
/// and records each achieved-vs-limit comparison. `base_seed` offsets the
/// instance stream.
///
/// Checked bounds, with OPT from exact search and m machines:
/// - partition-then-greedy, k in {1, 2, 4}: peak <= (1 + 1/k) * OPT when
///   every fraction is at most the split bound (every unit then respects
///   it exactly), plus a one-slot granularity slack of d_max otherwise;
/// - the threshold online partitioner, k = 4:
///   peak <= (1 + 1/k - 1/(m*k)) * OPT + d_max;
/// - least-loaded online fit: peak <= (2 - 1/m) * OPT;
/// - longest-first greedy: peak <= (4/3 - 1/(3m)) * OPT.
pub fn verify_ratio_suite(count: u64, base_seed: u64) -> Result<Vec<BoundCheck>, VerifyError> {
    let mut checks = Vec::new();
    for offset in 0..count {
        let seed = base_seed + offset;
        let instance = slack_instance(seed);
        let m = instance.n_pms();
        let opt = solve_exact(&instance, OracleLimits::default())?.opt_cm_max;
        let d_max = max_fraction(&instance);
        let p0 = lower_bound_p0(&instance);

        for k in [1u32, 2, 4] {
            let cfg = SchedulerConfig { k, ..SchedulerConfig::new(Algorithm::PrepartitionOff) };
            let out = schedule_offline(&instance, &cfg)?;
            let factor = frac_int(1) + frac(1, k as i64);
            let split_bound = p0 / frac_int(k as i64);
            let exact_family = d_max <= split_bound;
            let (label, limit) = if exact_family {
                (format!("PrepartitionOff k={k} (exact)"), factor * opt)
            } else {
                (format!("PrepartitionOff k={k} (slack)"), factor * opt + d_max)
            };
            checks.push(BoundCheck { seed, label, achieved: out.schedule.cm_max(), limit, opt });
        }

        let k = 4;
        let cfg = SchedulerConfig { k, ..SchedulerConfig::new(Algorithm::PrepartitionOn1) };
        let out = run_online(&instance, &cfg)?;
        let factor = frac_int(1) + frac(1, k as i64) - frac(1, (m as i64) * (k as i64));
        checks.push(BoundCheck {
            seed,
            label: format!("PrepartitionOn1 k={k}"),
            achieved: out.schedule.cm_max(),
            limit: factor * opt + d_max,
            opt,
        });

        let out = run_online(&instance, &SchedulerConfig::new(Algorithm::Olrsa))?;
        let factor = frac_int(2) - frac(1, m as i64);
        checks.push(BoundCheck {
            seed,
            label: "OLRSA".to_string(),
            achieved: out.schedule.cm_max(),
            limit: factor * opt,
            opt,
        });

        let out = schedule_offline(&instance, &SchedulerConfig::new(Algorithm::Lpt))?;
        let factor = frac(4, 3) - frac(1, 3 * m as i64);
        checks.push(BoundCheck {
            seed,
            label: "LPT".to_string(),
            achieved: out.schedule.cm_max(),
            limit: factor * opt,
            opt,
        });
    }
    Ok(checks)
}

/// What an equal-partitioner replay found. `budget_excesses` lists machines
/// whose final load exceeded the budget (possible when a split's segments
/// are forced onto already-loaded machines); callers decide whether that is
/// acceptable for their run.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub direct_placements: usize,
    /// Whole-request placements that fired a trigger but could not split:
    /// a single-slot request, or a single compatible machine. These are the
    /// partitioner's forced fallback and carry no ratio promise.
    pub forced_placements: usize,
    pub split_segments: usize,
    pub budget_excesses: Vec<(usize, Frac)>,
    /// True when every scheduled unit's own load fits within the budget, the
    /// precondition under which the final per-machine budget is expected to
    /// hold.
    pub segments_fit_budget: bool,
}

/// Independently replays an equal-partitioner decision log against the
/// instance, re-deriving machine loads from scratch, and checks that every
/// direct (whole-request) placement was either genuinely untriggered — the
/// loaded machine stays within the budget and within (1 + f) of the
/// would-be minimum load — or provably unsplittable (a single-slot request,
/// or a single compatible machine), the partitioner's forced fallback.
/// Also cross-checks the replayed loads against the schedule.
pub fn replay_equal_partition_invariants(
    instance: &WorkloadInstance,
    cfg: &SchedulerConfig,
    outcome: &SchedulerOutcome,
) -> Result<ReplayReport, VerifyError> {
    let cm_bound = cfg.resolved_cm_bound(&instance.slot_config);
    let one_plus_f = frac_int(1) + cfg.f;
    let m = instance.n_pms();
    let mut loads = vec![frac_int(0); m];
    let mut report = ReplayReport {
        direct_placements: 0,
        forced_placements: 0,
        split_segments: 0,
        budget_excesses: Vec::new(),
        segments_fit_budget: true,
    };

    let err = |d: &Decision, msg: String| {
        VerifyError::Replay(format!("decision {d:?}: {msg}"))
    };

    for d in &outcome.decisions_log {
        match d.action {
            Action::Split => continue,
            Action::Migrate => {
                return Err(err(d, "equal partitioner never migrates".to_string()))
            }
            Action::Place => {}
        }
        let unit = outcome
            .schedule
            .units
            .get(&d.request_id)
            .ok_or_else(|| err(d, "placed unit missing from schedule".to_string()))?;
        let pm = d
            .pm_id
            .ok_or_else(|| err(d, "placement without a machine".to_string()))?;
        if pm >= m {
            return Err(err(d, format!("machine {pm} out of range")));
        }
        let cm = unit.capacity_makespan();
        if unit.id == unit.origin_id {
            // Whole-request placement: either the trigger was off, or the
            // request could not have been split in the first place.
            let compatible: Vec<usize> = (0..m)
                .filter(|&i| match unit.pm_family {
                    Some(family) => instance.pm_pool[i].pm_type == family,
                    None => true,
                })
                .collect();
            if compatible.is_empty() {
                return Err(err(d, "no compatible machine".to_string()));
            }
            let loaded = loads[pm] + cm;
            let new_min = compatible
                .iter()
                .filter(|&&other| other != pm)
                .map(|&other| loads[other])
                .chain(std::iter::once(loaded))
                .min()
                .expect("the loaded machine itself is always a candidate");
            let untriggered = loaded <= cm_bound && loaded <= one_plus_f * new_min;
            if untriggered {
                report.direct_placements += 1;
            } else {
                let parts = (compatible.len() as u64).min(unit.duration_slots());
                if parts > 1 {
                    return Err(err(
                        d,
                        format!(
                            "whole-request placement was triggered (load {loaded}, budget \
                             {cm_bound}, ratio floor {new_min}) yet the request could have \
                             split into {parts} parts"
                        ),
                    ));
                }
                report.forced_placements += 1;
            }
        } else {
            report.split_segments += 1;
        }
        if cm > cm_bound {
            report.segments_fit_budget = false;
        }
        loads[pm] += cm;
    }

    for (pm, load) in loads.iter().enumerate() {
        let stored = outcome.schedule.pms[pm].capacity_makespan();
        if *load != stored {
            return Err(VerifyError::Replay(format!(
                "machine {pm}: replayed load {load} != schedule load {stored}"
            )));
        }
        if *load > cm_bound {
            report.budget_excesses.push((pm, *load));
        }
    }
    Ok(report)
}

/// Re-scans a schedule slot by slot from its raw units: the committed total
/// per (machine, slot) must never exceed 1. Exact rational arithmetic; zero
/// tolerance.
pub fn rescan_capacity(schedule: &Schedule) -> Result<(), VerifyError> {
    let horizon = schedule.slot_config.horizon_slots as usize;
    let mut committed = vec![vec![frac_int(0); horizon]; schedule.pms.len()];
    for (id, unit) in &schedule.units {
        let pm = *schedule
            .assignments
            .get(id)
            .ok_or_else(|| VerifyError::Replay(format!("unit {id} has no assignment")))?;
        for slot in unit.start_slot..unit.end_slot {
            committed[pm][slot as usize] += unit.capacity_fraction;
        }
    }
    for (pm, slots) in committed.iter().enumerate() {
        for (slot, total) in slots.iter().enumerate() {
            if *total > frac_int(1) {
                return Err(VerifyError::Replay(format!(
                    "machine {pm} slot {slot} committed {total} > 1"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_instances_are_deterministic_and_slack() {
        let a = slack_instance(7);
        let b = slack_instance(7);
        assert_eq!(a.requests, b.requests);
        assert!(a.n_requests() >= 1 && a.n_requests() <= 8);
        assert!(a.n_pms() >= 2 && a.n_pms() <= 3);
        for r in &a.requests {
            assert!(r.capacity_fraction <= frac(1, 8));
            assert!(r.duration_slots() <= 20);
        }
        let c = slack_instance(8);
        assert_ne!(
            a.requests, c.requests,
            "different seeds should give different instances"
        );
    }

    #[test]
    fn ratio_suite_holds_on_a_sample() {
        let checks = verify_ratio_suite(6, 100).unwrap();
        // 3 off-k checks + on1 + olrsa + lpt per instance.
        assert_eq!(checks.len(), 6 * 6);
        for check in &checks {
            assert!(
                check.holds(),
                "{} violated on seed {}: achieved {} > limit {} (opt {})",
                check.label,
                check.seed,
                check.achieved,
                check.limit,
                check.opt
            );
        }
    }

    #[test]
    fn replay_accepts_a_fresh_equal_partition_run() {
        let instance = slack_instance(3);
        let cfg = SchedulerConfig::new(Algorithm::PrepartitionOn2);
        let outcome = run_online(&instance, &cfg).unwrap();
        let report = replay_equal_partition_invariants(&instance, &cfg, &outcome).unwrap();
        assert_eq!(
            report.direct_placements + report.forced_placements + report.split_segments,
            outcome.schedule.units.len()
        );
        assert!(report.segments_fit_budget);
        assert!(report.budget_excesses.is_empty());
    }

    #[test]
    fn replay_rejects_a_forged_decision_log() {
        // Repoint one placement decision at a different machine: either the
        // clause check or the final load cross-check must catch the forgery.
        let mut forged_any = false;
        for seed in 0..20 {
            let instance = slack_instance(seed);
            if instance.n_pms() < 2 {
                continue;
            }
            let cfg = SchedulerConfig::new(Algorithm::PrepartitionOn2);
            let mut outcome = run_online(&instance, &cfg).unwrap();
            let Some(d) = outcome
                .decisions_log
                .iter_mut()
                .find(|d| d.action == Action::Place)
            else {
                continue;
            };
            let original = d.pm_id.unwrap();
            d.pm_id = Some((original + 1) % instance.n_pms());
            forged_any = true;
            let result = replay_equal_partition_invariants(&instance, &cfg, &outcome);
            assert!(result.is_err(), "forged log accepted on seed {seed}");
        }
        assert!(forged_any, "no instance produced a forgeable log");
    }

    #[test]
    fn capacity_rescan_accepts_algorithm_output_and_rejects_forgeries() {
        let instance = slack_instance(11);
        let out = schedule_offline(&instance, &SchedulerConfig::new(Algorithm::Lpt)).unwrap();
        rescan_capacity(&out.schedule).unwrap();

        // Forge: pile every assignment onto machine 0 without re-checking
        // capacity. With enough overlapping requests this must trip.
        let heavy: Vec<VmRequest> = (1..=12)
            .map(|i| VmRequest::new(i, 0, 4, frac(1, 8)).unwrap())
            .collect();
        let pool = vec![PmSpec::catalog(PmType::Type1); 2];
        let inst =
            WorkloadInstance::assemble(heavy, pool, 5, None, Provenance::Trace("forge".into()))
                .unwrap();
        let out = schedule_offline(&inst, &SchedulerConfig::new(Algorithm::Lpt)).unwrap();
        let mut forged = out.schedule.clone();
        let ids: Vec<u64> = forged.assignments.keys().copied().collect();
        for id in ids {
            forged.assignments.insert(id, 0);
        }
        assert!(rescan_capacity(&forged).is_err());
    }
}
