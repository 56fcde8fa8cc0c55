//! Exact solver for the peak capacity-makespan objective on desk-scale
//! instances. Used by the verification suites as ground truth for the
//! algorithms' approximation bounds.

use std::collections::BTreeMap;

use crate::model::{frac_int, Frac, PmId, PmState, VmId, VmRequest};
use crate::workload::WorkloadInstance;

/// Size caps for exact search; the search space is `m^n` assignments.
#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_requests: usize,
    pub max_pms: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_requests: 10, max_pms: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Smallest achievable peak capacity-makespan over whole-request
    /// assignments respecting per-slot capacity and family constraints.
    pub opt_cm_max: Frac,
    pub assignment: BTreeMap<VmId, PmId>,
    pub explored_nodes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("instance has {n} requests and {m} machines, beyond the exact-search limit {max_n}x{max_m}")]
    TooLarge { n: usize, m: usize, max_n: usize, max_m: usize },
    #[error("no feasible whole-request assignment exists")]
    Infeasible,
}

/// Load lower bound: total capacity-makespan spread evenly over machines.
/// Never exceeds the optimal peak.
pub fn lower_bound_p0(instance: &WorkloadInstance) -> Frac {
    let m = instance.n_pms();
    if m == 0 {
        return frac_int(0);
    }
    instance.total_capacity_makespan() / frac_int(m as i64)
}

/// Branch-and-bound exact minimizer.
///
/// Branches requests in descending capacity-makespan order; prunes a partial
/// assignment once its peak reaches the incumbent, and collapses machines
/// that are still empty and hardware-identical to an earlier empty machine.
pub fn solve_exact(
    instance: &WorkloadInstance,
    limits: OracleLimits,
) -> Result<OracleResult, OracleError> {
    let (n, m) = (instance.n_requests(), instance.n_pms());
    if n > limits.max_requests || m > limits.max_pms {
        return Err(OracleError::TooLarge {
            n,
            m,
            max_n: limits.max_requests,
            max_m: limits.max_pms,
        });
    }
    let mut order: Vec<&VmRequest> = instance.requests.iter().collect();
    order.sort_by(|a, b| {
        b.capacity_makespan().cmp(&a.capacity_makespan()).then(a.id.cmp(&b.id))
    });
    let mut pms: Vec<PmState> = instance
        .pm_pool
        .iter()
        .enumerate()
        .map(|(i, spec)| PmState::new(i, *spec, instance.slot_config.horizon_slots))
        .collect();
    let mut search = Search {
        order: &order,
        best: None,
        best_assignment: BTreeMap::new(),
        current: BTreeMap::new(),
        explored: 0,
    };
    search.descend(&mut pms, 0, frac_int(0));
    match search.best {
        Some(opt_cm_max) => Ok(OracleResult {
            opt_cm_max,
            assignment: search.best_assignment,
            explored_nodes: search.explored,
        }),
        None => Err(OracleError::Infeasible),
    }
}

struct Search<'a> {
    order: &'a [&'a VmRequest],
    best: Option<Frac>,
    best_assignment: BTreeMap<VmId, PmId>,
    current: BTreeMap<VmId, PmId>,
    explored: u64,
}

impl Search<'_> {
    fn descend(&mut self, pms: &mut Vec<PmState>, depth: usize, peak: Frac) {
        self.explored += 1;
        if let Some(best) = self.best {
            if peak >= best {
                return;
            }
        }
        let Some(request) = self.order.get(depth) else {
            self.best = Some(peak);
            self.best_assignment = self.current.clone();
            return;
        };
        let mut seen_empty_specs: Vec<usize> = Vec::new();
        for pm_id in 0..pms.len() {
            if !pms[pm_id].is_active() {
                if seen_empty_specs.iter().any(|&e| pms[e].spec == pms[pm_id].spec) {
                    continue;
                }
                seen_empty_specs.push(pm_id);
            }
            if pms[pm_id].try_place(request).is_ok() {
                let new_peak = peak.max(pms[pm_id].capacity_makespan());
                self.current.insert(request.id, pm_id);
                self.descend(pms, depth + 1, new_peak);
                self.current.remove(&request.id);
                pms[pm_id].remove(request.id).expect("placed above");
            }
        }
    }
}

/// Pruning-free reference: walks every complete assignment and checks
/// feasibility with its own per-slot accounting, sharing nothing with the
/// branch-and-bound path beyond the rational type.
pub fn solve_enumerate(
    instance: &WorkloadInstance,
    limits: OracleLimits,
) -> Result<OracleResult, OracleError> {
    let (n, m) = (instance.n_requests(), instance.n_pms());
    if n > limits.max_requests || m > limits.max_pms {
        return Err(OracleError::TooLarge {
            n,
            m,
            max_n: limits.max_requests,
            max_m: limits.max_pms,
        });
    }
    if m == 0 && n > 0 {
        return Err(OracleError::Infeasible);
    }
    let horizon = instance.slot_config.horizon_slots as usize;
    let mut best: Option<(Frac, Vec<PmId>)> = None;
    let mut assignment = vec![0 as PmId; n];
    let mut explored = 0u64;
    loop {
        explored += 1;
        if let Some(peak) = evaluate(instance, &assignment, horizon) {
            if best.as_ref().is_none_or(|(b, _)| peak < *b) {
                best = Some((peak, assignment.clone()));
            }
        }
        // Odometer over all m^n assignments.
        let mut pos = 0;
        loop {
            if pos == n {
                let result = match best {
                    Some((opt_cm_max, ref chosen)) => Ok(OracleResult {
                        opt_cm_max,
                        assignment: instance
                            .requests
                            .iter()
                            .zip(chosen)
                            .map(|(r, pm)| (r.id, *pm))
                            .collect(),
                        explored_nodes: explored,
                    }),
                    None => Err(OracleError::Infeasible),
                };
                return result;
            }
            assignment[pos] += 1;
            if assignment[pos] < m {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

fn evaluate(instance: &WorkloadInstance, assignment: &[PmId], horizon: usize) -> Option<Frac> {
    let one = frac_int(1);
    let mut peak = frac_int(0);
    for (pm_id, spec) in instance.pm_pool.iter().enumerate() {
        let mut load = vec![frac_int(0); horizon];
        let mut cm = frac_int(0);
        for (request, &target) in instance.requests.iter().zip(assignment) {
            if target != pm_id {
                continue;
            }
            if let Some(family) = request.pm_family {
                if family != spec.pm_type {
                    return None;
                }
            }
            for slot in request.start_slot..request.end_slot {
                let cell = &mut load[slot as usize];
                *cell += request.capacity_fraction;
                if *cell > one {
                    return None;
                }
            }
            cm += request.capacity_makespan();
        }
        peak = peak.max(cm);
    }
    Some(peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{frac, PmSpec};
    use crate::workload::{default_pm_pool, Provenance, WorkloadInstance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(requests: Vec<VmRequest>, pms: Vec<PmSpec>) -> WorkloadInstance {
        WorkloadInstance::assemble(requests, pms, 5, None, Provenance::Trace("test".into()))
            .unwrap()
    }

    #[test]
    fn single_request_single_pm() {
        let r = VmRequest::new(1, 0, 8, frac(1, 4)).unwrap();
        let inst = instance(vec![r.clone()], default_pm_pool(1, 0, 0));
        let result = solve_exact(&inst, OracleLimits::default()).unwrap();
        assert_eq!(result.opt_cm_max, frac_int(2));
        assert_eq!(result.assignment.get(&1), Some(&0));
        assert!(result.explored_nodes >= 1);
    }

    #[test]
    fn equal_disjoint_full_fraction_requests_split_across_pms() {
        // Both requests have capacity-makespan 4; stacking them on one PM is
        // time-feasible but doubles its load, so the optimum separates them.
        let a = VmRequest::new(1, 0, 4, frac(1, 1)).unwrap();
        let b = VmRequest::new(2, 4, 8, frac(1, 1)).unwrap();
        let inst = instance(vec![a, b], default_pm_pool(2, 0, 0));
        let result = solve_exact(&inst, OracleLimits::default()).unwrap();
        assert_eq!(result.opt_cm_max, frac_int(4));
    }

    #[test]
    fn respects_per_slot_capacity() {
        // Two overlapping full-capacity requests cannot share one PM.
        let a = VmRequest::new(1, 0, 6, frac(1, 1)).unwrap();
        let b = VmRequest::new(2, 3, 9, frac(1, 1)).unwrap();
        let one_pm = instance(vec![a.clone(), b.clone()], default_pm_pool(1, 0, 0));
        assert!(matches!(
            solve_exact(&one_pm, OracleLimits::default()),
            Err(OracleError::Infeasible)
        ));
        let two_pms = instance(vec![a, b], default_pm_pool(2, 0, 0));
        assert_eq!(
            solve_exact(&two_pms, OracleLimits::default()).unwrap().opt_cm_max,
            frac_int(6)
        );
    }

    #[test]
    fn respects_family_constraints() {
        let a = VmRequest::from_catalog(1, 0, 4, crate::model::VmType::T11).unwrap();
        let inst = instance(vec![a], default_pm_pool(0, 1, 0));
        assert!(matches!(
            solve_exact(&inst, OracleLimits::default()),
            Err(OracleError::Infeasible)
        ));
    }

    #[test]
    fn size_limits_are_enforced() {
        let requests: Vec<VmRequest> =
            (1..=11).map(|i| VmRequest::new(i, 0, 2, frac(1, 16)).unwrap()).collect();
        let inst = instance(requests, default_pm_pool(2, 0, 0));
        assert!(matches!(
            solve_exact(&inst, OracleLimits::default()),
            Err(OracleError::TooLarge { n: 11, .. })
        ));
    }

    #[test]
    fn empty_workload_has_zero_optimum() {
        let inst = instance(vec![], default_pm_pool(2, 0, 0));
        assert_eq!(solve_exact(&inst, OracleLimits::default()).unwrap().opt_cm_max, frac_int(0));
    }

    #[test]
    fn load_lower_bound_examples() {
        let a = VmRequest::new(1, 0, 6, frac(1, 2)).unwrap(); // CM 3
        let b = VmRequest::new(2, 0, 8, frac(1, 8)).unwrap(); // CM 1
        let inst = instance(vec![a, b], default_pm_pool(2, 0, 0));
        assert_eq!(lower_bound_p0(&inst), frac_int(2));
        let empty = instance(vec![], default_pm_pool(2, 0, 0));
        assert_eq!(lower_bound_p0(&empty), frac_int(0));
    }

    fn random_instance(seed: u64, n: usize, m: usize) -> WorkloadInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fractions = [frac(1, 16), frac(1, 8), frac(1, 4), frac(1, 2)];
        let requests = (0..n)
            .map(|i| {
                let start = rng.gen_range(0..15u64);
                let dur = rng.gen_range(1..=8u64);
                let f = fractions[rng.gen_range(0..fractions.len())];
                VmRequest::new(i as u64 + 1, start, start + dur, f).unwrap()
            })
            .collect();
        instance(requests, default_pm_pool(m as u32, 0, 0))
    }

    #[test]
    fn pruned_and_unpruned_search_agree() {
        for seed in 0..6 {
            let inst = random_instance(seed, 6, 2);
            let fast = solve_exact(&inst, OracleLimits::default());
            let slow = solve_enumerate(&inst, OracleLimits::default());
            match (fast, slow) {
                (Ok(a), Ok(b)) => assert_eq!(a.opt_cm_max, b.opt_cm_max, "seed {seed}"),
                (Err(OracleError::Infeasible), Err(OracleError::Infeasible)) => {}
                (a, b) => panic!("seed {seed}: divergent outcomes {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn both_lower_bounds_hold_against_the_optimum() {
        for seed in 20..30 {
            let inst = random_instance(seed, 6, 3);
            let Ok(result) = solve_exact(
                &inst,
                OracleLimits { max_requests: 10, max_pms: 4 },
            ) else {
                continue;
            };
            assert!(lower_bound_p0(&inst) <= result.opt_cm_max, "seed {seed}");
            let max_request_cm = inst
                .requests
                .iter()
                .map(|r| r.capacity_makespan())
                .max()
                .unwrap();
            assert!(max_request_cm <= result.opt_cm_max, "seed {seed}");
        }
    }

    #[test]
    fn symmetry_pruning_explores_fewer_nodes() {
        let inst = random_instance(99, 7, 3);
        let fast = solve_exact(&inst, OracleLimits::default()).unwrap();
        let slow = solve_enumerate(&inst, OracleLimits::default()).unwrap();
        assert_eq!(fast.opt_cm_max, slow.opt_cm_max);
        assert!(fast.explored_nodes < slow.explored_nodes);
    }

    #[test]
    fn mixed_pool_symmetry_only_collapses_identical_specs() {
        // One type-1 and one type-3 PM: a free-form request must still be
        // allowed on either, since their hardware differs.
        let a = VmRequest::new(1, 0, 4, frac(1, 2)).unwrap();
        let b = VmRequest::new(2, 0, 4, frac(1, 2)).unwrap();
        let mut pool = default_pm_pool(1, 0, 0);
        pool.extend(default_pm_pool(0, 0, 1));
        let inst = instance(vec![a, b], pool);
        let result = solve_exact(&inst, OracleLimits::default()).unwrap();
        assert_eq!(result.opt_cm_max, frac_int(2));
        let pms: Vec<PmId> = result.assignment.values().copied().collect();
        assert_eq!(pms, vec![0, 1]);
    }
}
