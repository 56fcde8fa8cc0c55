//! Core domain types: slotted time, the VM/PM catalog, placement state and
//! schedules. Capacity arithmetic is exact rational throughout so that
//! "exactly full" decisions never depend on float rounding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;

/// Exact capacity fraction / capacity-makespan value (slot * fraction units).
pub type Frac = Ratio<i64>;

pub type VmId = u64;
pub type PmId = usize;

/// Shorthand for an exact fraction.
pub fn frac(num: i64, den: i64) -> Frac {
    Ratio::new(num, den)
}

pub fn frac_int(v: i64) -> Frac {
    Ratio::from_integer(v)
}

pub fn frac_to_f64(v: Frac) -> f64 {
    *v.numer() as f64 / *v.denom() as f64
}

/// Discretized time axis: fixed-length slots from 0 to `horizon_slots`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotConfig {
    pub slot_length_minutes: u32,
    pub horizon_slots: u64,
}

impl SlotConfig {
    pub fn new(slot_length_minutes: u32, horizon_slots: u64) -> Result<Self, ModelError> {
        if slot_length_minutes == 0 {
            return Err(ModelError::InvalidSlotLength);
        }
        Ok(SlotConfig { slot_length_minutes, horizon_slots })
    }

    /// Slots per 24h day; the per-day capacity-makespan budget scales by this.
    pub fn slots_per_day(&self) -> u64 {
        (24 * 60 / self.slot_length_minutes).max(1) as u64
    }
}

impl Default for SlotConfig {
    fn default() -> Self {
        SlotConfig { slot_length_minutes: 5, horizon_slots: 0 }
    }
}

/// Physical machine family. VMs only run on their own family's machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PmType {
    Type1,
    Type2,
    Type3,
}

impl PmType {
    pub const ALL: [PmType; 3] = [PmType::Type1, PmType::Type2, PmType::Type3];

    pub fn code(self) -> u8 {
        match self {
            PmType::Type1 => 1,
            PmType::Type2 => 2,
            PmType::Type3 => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<PmType> {
        match code {
            1 => Some(PmType::Type1),
            2 => Some(PmType::Type2),
            3 => Some(PmType::Type3),
            _ => None,
        }
    }
}

impl fmt::Display for PmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// VM offering `<family>-<size>`; fixes the family and the share of a host
/// machine's compute capacity the VM occupies for its whole lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VmType {
    T11,
    T12,
    T13,
    T21,
    T22,
    T23,
    T31,
    T32,
}

impl VmType {
    pub const ALL: [VmType; 8] = [
        VmType::T11,
        VmType::T12,
        VmType::T13,
        VmType::T21,
        VmType::T22,
        VmType::T23,
        VmType::T31,
        VmType::T32,
    ];

    pub fn code(self) -> u8 {
        match self {
            VmType::T11 => 1,
            VmType::T12 => 2,
            VmType::T13 => 3,
            VmType::T21 => 4,
            VmType::T22 => 5,
            VmType::T23 => 6,
            VmType::T31 => 7,
            VmType::T32 => 8,
        }
    }

    pub fn from_code(code: u8) -> Option<VmType> {
        VmType::ALL.get(code.checked_sub(1)? as usize).copied()
    }

    pub fn family(self) -> PmType {
        match self {
            VmType::T11 | VmType::T12 | VmType::T13 => PmType::Type1,
            VmType::T21 | VmType::T22 | VmType::T23 => PmType::Type2,
            VmType::T31 | VmType::T32 => PmType::Type3,
        }
    }

    /// Share of the host family's compute units: e.g. a 1-2 VM (4 units) on a
    /// 16-unit type-1 host occupies 1/4.
    pub fn fraction(self) -> Frac {
        match self {
            VmType::T11 => frac(1, 16),
            VmType::T12 => frac(1, 4),
            VmType::T13 => frac(1, 2),
            VmType::T21 => frac(1, 8),
            VmType::T22 => frac(1, 4),
            VmType::T23 => frac(1, 2),
            VmType::T31 => frac(1, 8),
            VmType::T32 => frac(1, 2),
        }
    }

    /// (compute units, memory GB, storage GB) of the offering.
    pub fn resources(self) -> (f64, f64, f64) {
        match self {
            VmType::T11 => (1.0, 1.875, 211.25),
            VmType::T12 => (4.0, 7.5, 845.0),
            VmType::T13 => (8.0, 15.0, 1690.0),
            VmType::T21 => (6.5, 17.1, 422.5),
            VmType::T22 => (13.0, 34.2, 845.0),
            VmType::T23 => (26.0, 68.4, 1690.0),
            VmType::T31 => (5.0, 1.875, 422.5),
            VmType::T32 => (20.0, 7.0, 1690.0),
        }
    }
}

impl fmt::Display for VmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (fam, size) = match self {
            VmType::T11 => (1, 1),
            VmType::T12 => (1, 2),
            VmType::T13 => (1, 3),
            VmType::T21 => (2, 1),
            VmType::T22 => (2, 2),
            VmType::T23 => (2, 3),
            VmType::T31 => (3, 1),
            VmType::T32 => (3, 2),
        };
        write!(f, "{fam}-{size}")
    }
}

/// Hardware profile of one physical machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmSpec {
    pub pm_type: PmType,
    pub compute_units: f64,
    pub memory_gb: f64,
    pub storage_gb: f64,
}

impl PmSpec {
    pub fn catalog(pm_type: PmType) -> PmSpec {
        let (compute_units, memory_gb, storage_gb) = match pm_type {
            PmType::Type1 => (16.0, 30.0, 3380.0),
            PmType::Type2 => (52.0, 136.8, 3380.0),
            PmType::Type3 => (40.0, 14.0, 3380.0),
        };
        PmSpec { pm_type, compute_units, memory_gb, storage_gb }
    }
}

/// One reservation: a capacity fraction held on a single machine over the
/// fixed interval `[start_slot, end_slot)`.
///
/// `origin_id == id` for requests as submitted; partitioned segments keep the
/// submitted request's id in `origin_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmRequest {
    pub id: VmId,
    pub origin_id: VmId,
    pub start_slot: u64,
    pub end_slot: u64,
    pub capacity_fraction: Frac,
    pub vm_type: Option<VmType>,
    pub pm_family: Option<PmType>,
}

impl VmRequest {
    /// Free-form request: any exact fraction in (0, 1], placeable on any family.
    pub fn new(id: VmId, start_slot: u64, end_slot: u64, fraction: Frac) -> Result<Self, ModelError> {
        if end_slot <= start_slot {
            return Err(ModelError::EmptyInterval { id });
        }
        if fraction <= frac_int(0) || fraction > frac_int(1) {
            return Err(ModelError::FractionOutOfRange { id });
        }
        Ok(VmRequest {
            id,
            origin_id: id,
            start_slot,
            end_slot,
            capacity_fraction: fraction,
            vm_type: None,
            pm_family: None,
        })
    }

    /// Catalog request: fraction and host family come from the VM offering.
    pub fn from_catalog(id: VmId, start_slot: u64, end_slot: u64, vm_type: VmType) -> Result<Self, ModelError> {
        let mut r = VmRequest::new(id, start_slot, end_slot, vm_type.fraction())?;
        r.vm_type = Some(vm_type);
        r.pm_family = Some(vm_type.family());
        Ok(r)
    }

    pub fn duration_slots(&self) -> u64 {
        self.end_slot - self.start_slot
    }

    /// Capacity-makespan contribution: fraction times held slots.
    pub fn capacity_makespan(&self) -> Frac {
        self.capacity_fraction * frac_int(self.duration_slots() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("slot length must be at least one minute")]
    InvalidSlotLength,
    #[error("request {id}: interval is empty")]
    EmptyInterval { id: VmId },
    #[error("request {id}: capacity fraction must be in (0, 1]")]
    FractionOutOfRange { id: VmId },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlaceError {
    #[error("request {request} would exceed capacity on pm {pm} at slot {slot}")]
    CapacityExceeded { request: VmId, pm: PmId, slot: u64 },
    #[error("request {request} (family {family:?}) cannot run on pm {pm} (type {pm_type})")]
    FamilyMismatch { request: VmId, pm: PmId, family: PmType, pm_type: PmType },
    #[error("request {request} ends at slot {end} beyond horizon {horizon}")]
    OutOfHorizon { request: VmId, end: u64, horizon: u64 },
    #[error("request {request} is already placed on pm {pm}")]
    AlreadyPlaced { request: VmId, pm: PmId },
    #[error("request {request} is not assigned to pm {pm}")]
    NotAssigned { request: VmId, pm: PmId },
}

/// Interval and fraction a placed request holds on its machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacedSlice {
    pub start_slot: u64,
    pub end_slot: u64,
    pub fraction: Frac,
}

/// One physical machine's commitments over the horizon.
///
/// `committed[s]` is the exact sum of fractions of assigned requests whose
/// interval covers slot `s`; the invariant `committed[s] <= 1` holds after
/// every successful mutation. `capacity_makespan` is maintained incrementally
/// and always equals the sum over assigned requests of fraction * duration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmState {
    pub pm_id: PmId,
    pub spec: PmSpec,
    committed: Vec<Frac>,
    capacity_makespan: Frac,
    assigned: BTreeMap<VmId, PlacedSlice>,
}

// PmSpec holds f64 resource sizes that are fixed catalog constants, never
// computed with; exact equality on them is intentional.
impl Eq for PmSpec {}

impl PmState {
    pub fn new(pm_id: PmId, spec: PmSpec, horizon_slots: u64) -> Self {
        PmState {
            pm_id,
            spec,
            committed: vec![frac_int(0); horizon_slots as usize],
            capacity_makespan: frac_int(0),
            assigned: BTreeMap::new(),
        }
    }

    pub fn capacity_makespan(&self) -> Frac {
        self.capacity_makespan
    }

    pub fn committed(&self, slot: u64) -> Frac {
        self.committed.get(slot as usize).copied().unwrap_or_else(|| frac_int(0))
    }

    pub fn assigned(&self) -> &BTreeMap<VmId, PlacedSlice> {
        &self.assigned
    }

    pub fn is_active(&self) -> bool {
        !self.assigned.is_empty()
    }

    /// `[earliest start, latest end)` over assigned requests.
    pub fn busy_span(&self) -> Option<(u64, u64)> {
        self.assigned.values().fold(None, |acc, s| match acc {
            None => Some((s.start_slot, s.end_slot)),
            Some((lo, hi)) => Some((lo.min(s.start_slot), hi.max(s.end_slot))),
        })
    }

    /// Checks whether the request could be placed, without committing it.
    pub fn can_place(&self, request: &VmRequest) -> Result<(), PlaceError> {
        if let Some(family) = request.pm_family {
            if family != self.spec.pm_type {
                return Err(PlaceError::FamilyMismatch {
                    request: request.id,
                    pm: self.pm_id,
                    family,
                    pm_type: self.spec.pm_type,
                });
            }
        }
        if request.end_slot as usize > self.committed.len() {
            return Err(PlaceError::OutOfHorizon {
                request: request.id,
                end: request.end_slot,
                horizon: self.committed.len() as u64,
            });
        }
        if self.assigned.contains_key(&request.id) {
            return Err(PlaceError::AlreadyPlaced { request: request.id, pm: self.pm_id });
        }
        let one = frac_int(1);
        for slot in request.start_slot..request.end_slot {
            if self.committed[slot as usize] + request.capacity_fraction > one {
                return Err(PlaceError::CapacityExceeded {
                    request: request.id,
                    pm: self.pm_id,
                    slot,
                });
            }
        }
        Ok(())
    }

    /// Family- and capacity-checks the request; commits it only if every slot
    /// of its interval stays within capacity. Exactly-full slots are accepted.
    pub fn try_place(&mut self, request: &VmRequest) -> Result<(), PlaceError> {
        self.can_place(request)?;
        for slot in request.start_slot..request.end_slot {
            self.committed[slot as usize] += request.capacity_fraction;
        }
        self.capacity_makespan += request.capacity_makespan();
        self.assigned.insert(
            request.id,
            PlacedSlice {
                start_slot: request.start_slot,
                end_slot: request.end_slot,
                fraction: request.capacity_fraction,
            },
        );
        Ok(())
    }

    /// Undoes a placement; restores the exact prior state.
    pub fn remove(&mut self, request_id: VmId) -> Result<PlacedSlice, PlaceError> {
        let slice = self
            .assigned
            .remove(&request_id)
            .ok_or(PlaceError::NotAssigned { request: request_id, pm: self.pm_id })?;
        for slot in slice.start_slot..slice.end_slot {
            self.committed[slot as usize] -= slice.fraction;
        }
        self.capacity_makespan -=
            slice.fraction * frac_int((slice.end_slot - slice.start_slot) as i64);
        Ok(slice)
    }
}

/// Completed placement of a workload: every scheduled unit (a whole request
/// or a partitioned segment), its machine, and the partition lineage.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub slot_config: SlotConfig,
    /// Every scheduled unit by id, segments included.
    pub units: BTreeMap<VmId, VmRequest>,
    /// Unit id -> machine index.
    pub assignments: BTreeMap<VmId, PmId>,
    /// Origin id -> its scheduled unit ids ordered by start slot. Unsplit
    /// requests map to a singleton holding their own id.
    pub segments: BTreeMap<VmId, Vec<VmId>>,
    pub pms: Vec<PmState>,
    /// Accumulated partition counter of the algorithm that built the schedule.
    pub partition_count: u64,
}

impl Schedule {
    pub fn cm_max(&self) -> Frac {
        self.pms
            .iter()
            .map(|pm| pm.capacity_makespan())
            .max()
            .unwrap_or_else(|| frac_int(0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("unit {unit} is assigned to pm {pm} but missing from that pm's state")]
    AssignmentMissingOnPm { unit: VmId, pm: PmId },
    #[error("pm {pm} holds unit {unit} that has no assignment entry")]
    StrayUnitOnPm { unit: VmId, pm: PmId },
    #[error("unit {unit} has an assignment but no request record")]
    UnknownUnit { unit: VmId },
    #[error("unit {unit} is recorded with a different interval or fraction on pm {pm}")]
    SliceMismatch { unit: VmId, pm: PmId },
    #[error("pm {pm} slot {slot}: committed capacity exceeds 1")]
    OverCapacity { pm: PmId, slot: u64 },
    #[error("pm {pm} slot {slot}: stored committed value disagrees with recomputation")]
    CommittedMismatch { pm: PmId, slot: u64 },
    #[error("pm {pm}: stored capacity-makespan disagrees with recomputation")]
    CmMismatch { pm: PmId },
    #[error("unit {unit} references origin {origin} that is not in the workload")]
    UnknownOrigin { unit: VmId, origin: VmId },
    #[error("origin {origin}: segments do not tile its interval exactly")]
    BrokenCoverage { origin: VmId },
    #[error("origin {origin}: segment {unit} differs in fraction, family, or type")]
    SegmentShapeMismatch { origin: VmId, unit: VmId },
    #[error("origin {origin} from the workload was never scheduled")]
    MissingOrigin { origin: VmId },
    #[error("unit {unit} placed on pm {pm} of type {pm_type} despite family {family:?}")]
    FamilyViolation { unit: VmId, pm: PmId, family: PmType, pm_type: PmType },
}

impl Schedule {
    /// Independent consistency check against the submitted workload: rebuilds
    /// per-slot commitments and capacity-makespans from the assignment lists,
    /// verifies capacity is never exceeded, and verifies that each origin's
    /// segments tile its interval exactly with an unchanged fraction.
    pub fn audit(&self, origins: &[VmRequest]) -> Result<(), AuditError> {
        for (&unit, &pm) in &self.assignments {
            let state = self.pms.get(pm).ok_or(AuditError::AssignmentMissingOnPm { unit, pm })?;
            let slice =
                state.assigned.get(&unit).ok_or(AuditError::AssignmentMissingOnPm { unit, pm })?;
            let req = self.units.get(&unit).ok_or(AuditError::UnknownUnit { unit })?;
            if slice.start_slot != req.start_slot
                || slice.end_slot != req.end_slot
                || slice.fraction != req.capacity_fraction
            {
                return Err(AuditError::SliceMismatch { unit, pm });
            }
            if let Some(family) = req.pm_family {
                if family != state.spec.pm_type {
                    return Err(AuditError::FamilyViolation {
                        unit,
                        pm,
                        family,
                        pm_type: state.spec.pm_type,
                    });
                }
            }
        }
        for state in &self.pms {
            for &unit in state.assigned.keys() {
                if self.assignments.get(&unit) != Some(&state.pm_id) {
                    return Err(AuditError::StrayUnitOnPm { unit, pm: state.pm_id });
                }
            }
            let horizon = self.slot_config.horizon_slots;
            let mut recomputed = vec![frac_int(0); horizon as usize];
            let mut cm = frac_int(0);
            for slice in state.assigned.values() {
                for slot in slice.start_slot..slice.end_slot {
                    recomputed[slot as usize] += slice.fraction;
                }
                cm += slice.fraction * frac_int((slice.end_slot - slice.start_slot) as i64);
            }
            let one = frac_int(1);
            for slot in 0..horizon {
                if recomputed[slot as usize] > one {
                    return Err(AuditError::OverCapacity { pm: state.pm_id, slot });
                }
                if recomputed[slot as usize] != state.committed(slot) {
                    return Err(AuditError::CommittedMismatch { pm: state.pm_id, slot });
                }
            }
            if cm != state.capacity_makespan() {
                return Err(AuditError::CmMismatch { pm: state.pm_id });
            }
        }
        let by_id: BTreeMap<VmId, &VmRequest> = origins.iter().map(|r| (r.id, r)).collect();
        let mut covered: BTreeSet<VmId> = BTreeSet::new();
        for (&origin, unit_ids) in &self.segments {
            let src = *by_id.get(&origin).ok_or(AuditError::UnknownOrigin { unit: origin, origin })?;
            let mut parts: Vec<&VmRequest> = Vec::with_capacity(unit_ids.len());
            for &unit in unit_ids {
                let req = self.units.get(&unit).ok_or(AuditError::UnknownUnit { unit })?;
                if req.origin_id != origin {
                    return Err(AuditError::UnknownOrigin { unit, origin });
                }
                if req.capacity_fraction != src.capacity_fraction
                    || req.vm_type != src.vm_type
                    || req.pm_family != src.pm_family
                {
                    return Err(AuditError::SegmentShapeMismatch { origin, unit });
                }
                parts.push(req);
            }
            parts.sort_by_key(|r| r.start_slot);
            let mut cursor = src.start_slot;
            for part in &parts {
                if part.start_slot != cursor {
                    return Err(AuditError::BrokenCoverage { origin });
                }
                cursor = part.end_slot;
            }
            if cursor != src.end_slot {
                return Err(AuditError::BrokenCoverage { origin });
            }
            covered.insert(origin);
        }
        for origin in origins {
            if !covered.contains(&origin.id) {
                return Err(AuditError::MissingOrigin { origin: origin.id });
            }
        }
        Ok(())
    }
}
