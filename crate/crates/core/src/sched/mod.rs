//! Placement algorithms and their shared machinery: the algorithm registry,
//! run configuration, decision logging, and the schedule builder that every
//! algorithm mutates through.

mod offline;
pub(crate) mod online;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine;
use crate::model::{
    frac, frac_int, Frac, PlaceError, PmId, PmState, Schedule, SlotConfig, VmId, VmRequest,
};
use crate::workload::WorkloadInstance;

pub use offline::{lpt, pmg, prepartition_off, round_robin};

/// The eight placement strategies. Offline ones see the whole workload at
/// once; online ones see requests only as they arrive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Random,
    RoundRobin,
    #[serde(rename = "LPT")]
    Lpt,
    #[serde(rename = "PMG")]
    Pmg,
    #[serde(rename = "OLRSA")]
    Olrsa,
    PrepartitionOff,
    PrepartitionOn1,
    PrepartitionOn2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Random,
        Algorithm::RoundRobin,
        Algorithm::Lpt,
        Algorithm::Pmg,
        Algorithm::Olrsa,
        Algorithm::PrepartitionOff,
        Algorithm::PrepartitionOn1,
        Algorithm::PrepartitionOn2,
    ];

    pub fn is_online(self) -> bool {
        matches!(
            self,
            Algorithm::Random
                | Algorithm::Olrsa
                | Algorithm::PrepartitionOn1
                | Algorithm::PrepartitionOn2
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Random => "Random",
            Algorithm::RoundRobin => "RoundRobin",
            Algorithm::Lpt => "LPT",
            Algorithm::Pmg => "PMG",
            Algorithm::Olrsa => "OLRSA",
            Algorithm::PrepartitionOff => "PrepartitionOff",
            Algorithm::PrepartitionOn1 => "PrepartitionOn1",
            Algorithm::PrepartitionOn2 => "PrepartitionOn2",
        }
    }

    /// Whether the partition depth `k` steers this algorithm.
    pub fn uses_k(self) -> bool {
        matches!(self, Algorithm::PrepartitionOff | Algorithm::PrepartitionOn1)
    }

    /// Whether the imbalance tolerance `f` and the per-machine budget steer it.
    pub fn uses_f(self) -> bool {
        self == Algorithm::PrepartitionOn2
    }

    pub fn uses_seed(self) -> bool {
        self == Algorithm::Random
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

/// Tuning for one run. `k` deepens partitioning for the partition-first
/// algorithms, `f`/`cm_bound` steer the threshold-based online partitioner,
/// `pmg_factor` widens the migration thresholds, `seed` drives Random.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub algorithm: Algorithm,
    pub k: u32,
    pub f: Frac,
    /// Per-machine capacity-makespan budget. Defaults to 16 of every 24
    /// horizon hours, i.e. two thirds of the horizon.
    pub cm_bound: Option<Frac>,
    pub pmg_factor: Frac,
    pub seed: u64,
}

impl SchedulerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        SchedulerConfig {
            algorithm,
            k: 4,
            f: frac(1, 8),
            cm_bound: None,
            pmg_factor: frac(1, 10),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.k < 1 {
            return Err(ScheduleError::InvalidK { k: self.k });
        }
        if self.f <= frac_int(0) || self.f > frac(1, 2) {
            return Err(ScheduleError::InvalidF { f: self.f });
        }
        if self.pmg_factor <= frac_int(0) || self.pmg_factor >= frac_int(1) {
            return Err(ScheduleError::InvalidFactor { factor: self.pmg_factor });
        }
        if let Some(bound) = self.cm_bound {
            if bound <= frac_int(0) {
                return Err(ScheduleError::InvalidConfig(
                    "cm_bound must be positive".into(),
                ));
            }
        }
        Ok(())
    }

    /// The effective per-machine budget: the explicit bound, or 16 hours of
    /// slot-fraction per horizon day.
    pub fn resolved_cm_bound(&self, slot_config: &SlotConfig) -> Frac {
        if let Some(bound) = self.cm_bound {
            return bound;
        }
        let per_day = slot_config.slots_per_day();
        let days = slot_config.horizon_slots.div_ceil(per_day).max(1);
        frac(2, 3) * frac_int((per_day * days) as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Place,
    Split,
    Migrate,
}

/// One replayable scheduling event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub slot: u64,
    pub request_id: VmId,
    pub origin_id: VmId,
    pub pm_id: Option<PmId>,
    pub action: Action,
}

/// JSON-lines rendering of a decision log, one event per line.
pub fn decisions_to_jsonl(decisions: &[Decision]) -> String {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&serde_json::to_string(d).expect("decision serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct SchedulerOutcome {
    pub schedule: Schedule,
    pub decisions_log: Vec<Decision>,
}

impl SchedulerOutcome {
    pub fn partition_count(&self) -> u64 {
        self.schedule.partition_count
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("request {request} cannot be placed on any machine")]
    Infeasible { request: VmId },
    #[error("partition depth k={k} is invalid; k must be at least 1")]
    InvalidK { k: u32 },
    #[error("imbalance tolerance f={f} is invalid; f must be in (0, 1/2]")]
    InvalidF { f: Frac },
    #[error("migration factor {factor} is invalid; it must be in (0, 1)")]
    InvalidFactor { factor: Frac },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Place(#[from] PlaceError),
}

/// Runs the configured algorithm through the driver it needs.
pub fn run(
    instance: &WorkloadInstance,
    cfg: &SchedulerConfig,
) -> Result<SchedulerOutcome, ScheduleError> {
    cfg.validate()?;
    if cfg.algorithm.is_online() {
        engine::run_online(instance, cfg)
    } else {
        schedule_offline(instance, cfg)
    }
}

/// Batch driver for the algorithms that see the whole workload up front.
pub fn schedule_offline(
    instance: &WorkloadInstance,
    cfg: &SchedulerConfig,
) -> Result<SchedulerOutcome, ScheduleError> {
    cfg.validate()?;
    let mut builder = ScheduleBuilder::new(instance);
    match cfg.algorithm {
        Algorithm::RoundRobin => offline::round_robin_into(&mut builder, instance)?,
        Algorithm::Lpt => offline::lpt_into(&mut builder, instance)?,
        Algorithm::Pmg => offline::pmg_into(&mut builder, instance, cfg.pmg_factor)?,
        Algorithm::PrepartitionOff => offline::prepartition_off_into(&mut builder, instance, cfg.k)?,
        online => {
            return Err(ScheduleError::InvalidConfig(format!(
                "{online} is an online algorithm; it runs through the arrival driver"
            )))
        }
    }
    Ok(builder.finish())
}

/// Mutable scheduling state shared by every algorithm: machine states plus
/// the unit, assignment, lineage, and decision bookkeeping.
pub(crate) struct ScheduleBuilder {
    slot_config: SlotConfig,
    pub(crate) pms: Vec<PmState>,
    units: BTreeMap<VmId, VmRequest>,
    assignments: BTreeMap<VmId, PmId>,
    segments: BTreeMap<VmId, Vec<VmId>>,
    pub(crate) partition_count: u64,
    decisions: Vec<Decision>,
    next_unit_id: VmId,
}

impl ScheduleBuilder {
    pub(crate) fn new(instance: &WorkloadInstance) -> Self {
        let pms = instance
            .pm_pool
            .iter()
            .enumerate()
            .map(|(i, spec)| PmState::new(i, *spec, instance.slot_config.horizon_slots))
            .collect();
        let next_unit_id = instance.requests.iter().map(|r| r.id).max().unwrap_or(0) + 1;
        ScheduleBuilder {
            slot_config: instance.slot_config,
            pms,
            units: BTreeMap::new(),
            assignments: BTreeMap::new(),
            segments: BTreeMap::new(),
            partition_count: 0,
            decisions: Vec::new(),
            next_unit_id,
        }
    }

    pub(crate) fn fresh_id(&mut self) -> VmId {
        let id = self.next_unit_id;
        self.next_unit_id += 1;
        id
    }

    /// Machines ordered by (capacity-makespan, id); the canonical tie-break
    /// every load-driven choice uses.
    pub(crate) fn pms_by_load(&self) -> Vec<PmId> {
        let mut order: Vec<PmId> = (0..self.pms.len()).collect();
        order.sort_by_key(|&i| (self.pms[i].capacity_makespan(), i));
        order
    }

    /// Least-loaded machine that can actually host the request.
    pub(crate) fn min_cm_feasible(&self, request: &VmRequest) -> Option<PmId> {
        self.pms_by_load()
            .into_iter()
            .find(|&pm| self.pms[pm].can_place(request).is_ok())
    }

    pub(crate) fn place(
        &mut self,
        unit: &VmRequest,
        pm_id: PmId,
        slot: u64,
        action: Action,
    ) -> Result<(), ScheduleError> {
        self.place_quiet(unit, pm_id)?;
        self.decisions.push(Decision {
            slot,
            request_id: unit.id,
            origin_id: unit.origin_id,
            pm_id: Some(pm_id),
            action,
        });
        Ok(())
    }

    /// Places without logging a decision; for re-placements that land a unit
    /// back where it already was.
    pub(crate) fn place_quiet(&mut self, unit: &VmRequest, pm_id: PmId) -> Result<(), ScheduleError> {
        self.pms[pm_id].try_place(unit)?;
        self.assignments.insert(unit.id, pm_id);
        let lineage = self.segments.entry(unit.origin_id).or_default();
        if !lineage.contains(&unit.id) {
            lineage.push(unit.id);
        }
        self.units.insert(unit.id, unit.clone());
        Ok(())
    }

    /// Unassigns a placed unit, keeping its record for re-placement.
    pub(crate) fn unassign(&mut self, unit_id: VmId) -> Result<VmRequest, ScheduleError> {
        let pm_id = self.assignments.remove(&unit_id).ok_or_else(|| {
            ScheduleError::InvalidConfig(format!("unit {unit_id} is not assigned"))
        })?;
        self.pms[pm_id].remove(unit_id)?;
        Ok(self.units[&unit_id].clone())
    }

    pub(crate) fn record_split(&mut self, item: &VmRequest, slot: u64) {
        self.decisions.push(Decision {
            slot,
            request_id: item.id,
            origin_id: item.origin_id,
            pm_id: None,
            action: Action::Split,
        });
    }

    pub(crate) fn finish(mut self) -> SchedulerOutcome {
        for lineage in self.segments.values_mut() {
            lineage.sort_by_key(|id| self.units[id].start_slot);
        }
        let schedule = Schedule {
            slot_config: self.slot_config,
            units: self.units,
            assignments: self.assignments,
            segments: self.segments,
            pms: self.pms,
            partition_count: self.partition_count,
        };
        SchedulerOutcome { schedule, decisions_log: self.decisions }
    }
}

/// Cuts a request into consecutive segments whose capacity-makespan stays
/// within `bound`: each segment spans `floor(bound / fraction)` slots (at
/// least one), the last one carries the remainder. Returns `None` when the
/// request already fits a single segment.
pub(crate) fn split_by_cm_bound(
    request: &VmRequest,
    bound: Frac,
    mut fresh: impl FnMut() -> VmId,
) -> Option<Vec<VmRequest>> {
    let duration = request.duration_slots();
    let per = (bound / request.capacity_fraction).floor().to_integer();
    if per >= duration as i64 {
        return None;
    }
    let len = per.max(1) as u64;
    let count = duration.div_ceil(len);
    let mut segments = Vec::with_capacity(count as usize);
    let mut start = request.start_slot;
    for i in 0..count {
        let end = if i + 1 == count { request.end_slot } else { start + len };
        let mut seg = request.clone();
        seg.id = fresh();
        seg.start_slot = start;
        seg.end_slot = end;
        segments.push(seg);
        start = end;
    }
    Some(segments)
}

/// Cuts a request into `parts` consecutive segments of near-equal length;
/// leftover slots go to the earliest segments. `parts` must not exceed the
/// request's duration.
pub(crate) fn split_equal_parts(
    request: &VmRequest,
    parts: u64,
    mut fresh: impl FnMut() -> VmId,
) -> Vec<VmRequest> {
    let duration = request.duration_slots();
    debug_assert!(parts >= 2 && parts <= duration);
    let base = duration / parts;
    let remainder = duration % parts;
    let mut segments = Vec::with_capacity(parts as usize);
    let mut start = request.start_slot;
    for i in 0..parts {
        let len = base + u64::from(i < remainder);
        let mut seg = request.clone();
        seg.id = fresh();
        seg.start_slot = start;
        seg.end_slot = start + len;
        segments.push(seg);
        start += len;
    }
    segments
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::frac;

    #[test]
    fn cm_bound_split_uses_floor_lengths_with_remainder_last() {
        let r = VmRequest::new(7, 0, 10, frac(1, 2)).unwrap();
        let mut next = 100;
        let segs = split_by_cm_bound(&r, frac_int(1), || {
            next += 1;
            next
        })
        .unwrap();
        assert_eq!(segs.len(), 5);
        for seg in &segs {
            assert_eq!(seg.duration_slots(), 2);
            assert_eq!(seg.origin_id, 7);
            assert_eq!(seg.capacity_makespan(), frac_int(1));
        }
        assert_eq!(segs[0].start_slot, 0);
        assert_eq!(segs[4].end_slot, 10);

        // Non-dividing bound: 7 slots at 1/4 with bound 3/4 -> 3+3+1.
        let r = VmRequest::new(8, 5, 12, frac(1, 4)).unwrap();
        let segs = split_by_cm_bound(&r, frac(3, 4), || {
            next += 1;
            next
        })
        .unwrap();
        let lens: Vec<u64> = segs.iter().map(|s| s.duration_slots()).collect();
        assert_eq!(lens, vec![3, 3, 1]);
        assert_eq!(segs.last().unwrap().end_slot, 12);
    }

    #[test]
    fn cm_bound_split_returns_none_when_request_fits() {
        let r = VmRequest::new(1, 0, 4, frac(1, 4)).unwrap();
        assert!(split_by_cm_bound(&r, frac_int(1), || 10).is_none());
        // Exactly at the bound: one piece, no split.
        let r = VmRequest::new(2, 0, 4, frac(1, 2)).unwrap();
        assert!(split_by_cm_bound(&r, frac_int(2), || 10).is_none());
    }

    #[test]
    fn fraction_above_bound_falls_back_to_single_slots() {
        let r = VmRequest::new(1, 0, 3, frac(1, 2)).unwrap();
        let mut next = 10;
        let segs = split_by_cm_bound(&r, frac(1, 8), || {
            next += 1;
            next
        })
        .unwrap();
        assert_eq!(segs.iter().map(|s| s.duration_slots()).collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    #[test]
    fn equal_split_gives_early_segments_the_remainder() {
        let r = VmRequest::new(3, 10, 21, frac(1, 4)).unwrap();
        let mut next = 50;
        let segs = split_equal_parts(&r, 3, || {
            next += 1;
            next
        });
        let lens: Vec<u64> = segs.iter().map(|s| s.duration_slots()).collect();
        assert_eq!(lens, vec![4, 4, 3]);
        assert_eq!(segs[0].start_slot, 10);
        assert_eq!(segs[2].end_slot, 21);
        assert!(segs.windows(2).all(|w| w[0].end_slot == w[1].start_slot));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert_eq!("lpt".parse::<Algorithm>().unwrap(), Algorithm::Lpt);
        assert!("NotAnAlgorithm".parse::<Algorithm>().is_err());
    }

    #[test]
    fn default_cm_bound_is_two_thirds_of_horizon_days() {
        let cfg = SchedulerConfig::new(Algorithm::PrepartitionOn2);
        let one_day = SlotConfig::new(5, 288).unwrap();
        assert_eq!(cfg.resolved_cm_bound(&one_day), frac_int(192));
        let ten_days = SlotConfig::new(5, 2880).unwrap();
        assert_eq!(cfg.resolved_cm_bound(&ten_days), frac_int(1920));
        let partial = SlotConfig::new(5, 289).unwrap();
        assert_eq!(cfg.resolved_cm_bound(&partial), frac_int(384));
        let pinned = SchedulerConfig { cm_bound: Some(frac_int(7)), ..cfg };
        assert_eq!(pinned.resolved_cm_bound(&one_day), frac_int(7));
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let mut cfg = SchedulerConfig::new(Algorithm::PrepartitionOff);
        cfg.k = 0;
        assert_eq!(cfg.validate(), Err(ScheduleError::InvalidK { k: 0 }));
        let mut cfg = SchedulerConfig::new(Algorithm::PrepartitionOn2);
        cfg.f = frac(3, 4);
        assert!(matches!(cfg.validate(), Err(ScheduleError::InvalidF { .. })));
        let mut cfg = SchedulerConfig::new(Algorithm::Pmg);
        cfg.pmg_factor = frac_int(1);
        assert!(matches!(cfg.validate(), Err(ScheduleError::InvalidFactor { .. })));
    }

    #[test]
    fn decision_log_serializes_to_json_lines() {
        let decisions = vec![
            Decision { slot: 0, request_id: 1, origin_id: 1, pm_id: Some(2), action: Action::Place },
            Decision { slot: 3, request_id: 9, origin_id: 4, pm_id: None, action: Action::Split },
        ];
        let text = decisions_to_jsonl(&decisions);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            r#"{"slot":0,"request_id":1,"origin_id":1,"pm_id":2,"action":"place"}"#
        );
        assert_eq!(
            lines[1],
            r#"{"slot":3,"request_id":9,"origin_id":4,"pm_id":null,"action":"split"}"#
        );
    }
}
