//! Workload acquisition: cluster-trace ingestion, the seeded synthetic
//! generator, PM pool construction, and the instance JSON interchange format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::model::{
    frac, frac_int, Frac, ModelError, PmSpec, PmType, SlotConfig, VmId, VmRequest, VmType,
};

/// Where an instance came from; not part of the interchange format.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Trace(String),
    Synthetic(SyntheticParams),
}

/// A fully specified scheduling problem: ordered requests plus the machine
/// pool they compete for.
#[derive(Debug, Clone)]
pub struct WorkloadInstance {
    pub slot_config: SlotConfig,
    /// Sorted by (start_slot, id); this is the arrival order online drivers see.
    pub requests: Vec<VmRequest>,
    pub pm_pool: Vec<PmSpec>,
    pub provenance: Provenance,
}

impl WorkloadInstance {
    /// Sorts the requests into arrival order and computes the horizon
    /// (one slot past the latest end) unless a larger one is given.
    pub fn assemble(
        mut requests: Vec<VmRequest>,
        pm_pool: Vec<PmSpec>,
        slot_length_minutes: u32,
        min_horizon: Option<u64>,
        provenance: Provenance,
    ) -> Result<Self, WorkloadError> {
        let mut seen = BTreeMap::new();
        for r in &requests {
            if seen.insert(r.id, ()).is_some() {
                return Err(WorkloadError::DuplicateId { id: r.id });
            }
        }
        requests.sort_by_key(|r| (r.start_slot, r.id));
        let computed = requests.iter().map(|r| r.end_slot + 1).max().unwrap_or(0);
        let horizon = computed.max(min_horizon.unwrap_or(0));
        let slot_config = SlotConfig::new(slot_length_minutes, horizon)?;
        Ok(WorkloadInstance { slot_config, requests, pm_pool, provenance })
    }

    pub fn n_requests(&self) -> usize {
        self.requests.len()
    }

    /// Machine count, the `m` of the balancing bounds.
    pub fn n_pms(&self) -> usize {
        self.pm_pool.len()
    }

    /// Sum over requests of fraction * duration.
    pub fn total_capacity_makespan(&self) -> Frac {
        self.requests.iter().map(|r| r.capacity_makespan()).sum()
    }
}

/// `n1/n2/n3` machines of catalog types 1/2/3, in type order.
pub fn default_pm_pool(n1: u32, n2: u32, n3: u32) -> Vec<PmSpec> {
    let mut pool = Vec::with_capacity((n1 + n2 + n3) as usize);
    for (n, t) in [(n1, PmType::Type1), (n2, PmType::Type2), (n3, PmType::Type3)] {
        pool.extend(std::iter::repeat_n(PmSpec::catalog(t), n as usize));
    }
    pool
}

/// Which of start and duration carries the Normal shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenMode {
    /// Durations ~ Normal(mean, std); starts uniform over the feasible range.
    DurationNormal,
    /// Starts ~ Normal(mean, std); durations uniform in [1, mean].
    StartNormal,
}

/// Knobs of the seeded synthetic workload generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub n_vms: u32,
    pub mean_slots: f64,
    pub std_slots: f64,
    /// Draw weights for the eight catalog VM types, in code order.
    pub type_distribution: [f64; 8],
    pub seed: u64,
    /// Generation window for start slots; defaults to 4 * mean_slots.
    pub horizon_slots: Option<u64>,
    pub mode: GenMode,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_vms: 1000,
            mean_slots: 864.0,
            std_slots: 288.0,
            type_distribution: [1.0; 8],
            seed: 1,
            horizon_slots: None,
            mode: GenMode::DurationNormal,
        }
    }
}

impl SyntheticParams {
    fn gen_horizon(&self) -> u64 {
        self.horizon_slots.unwrap_or((self.mean_slots * 4.0).ceil() as u64).max(1)
    }
}

/// Draws `n_vms` catalog requests; identical parameters give identical output.
pub fn generate_synthetic(
    params: &SyntheticParams,
    pm_pool: Vec<PmSpec>,
) -> Result<WorkloadInstance, WorkloadError> {
    if params.n_vms == 0 {
        return Err(WorkloadError::InvalidParams("n_vms must be at least 1".into()));
    }
    if !params.mean_slots.is_finite() || params.mean_slots < 1.0 {
        return Err(WorkloadError::InvalidParams("mean_slots must be a finite value >= 1".into()));
    }
    if !params.std_slots.is_finite() || params.std_slots < 0.0 {
        return Err(WorkloadError::InvalidParams("std_slots must be finite and non-negative".into()));
    }
    if params.type_distribution.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(WorkloadError::InvalidParams("type weights must be non-negative".into()));
    }
    let types = WeightedIndex::new(params.type_distribution)
        .map_err(|e| WorkloadError::InvalidParams(format!("type_distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let horizon = params.gen_horizon();
    let dur_cap = ((params.mean_slots * 4.0).round() as u64).clamp(1, horizon);
    let normal = if params.std_slots > 0.0 {
        Some(
            Normal::new(params.mean_slots, params.std_slots)
                .map_err(|e| WorkloadError::InvalidParams(format!("duration distribution: {e}")))?,
        )
    } else {
        None
    };
    let mut requests = Vec::with_capacity(params.n_vms as usize);
    for id in 1..=params.n_vms as VmId {
        let vm_type = VmType::ALL[types.sample(&mut rng)];
        let (start, dur) = match params.mode {
            GenMode::DurationNormal => {
                let raw = match &normal {
                    Some(n) => n.sample(&mut rng).round(),
                    None => params.mean_slots.round(),
                };
                let dur = (raw.max(1.0) as u64).min(dur_cap);
                let start = Uniform::new_inclusive(0, horizon - dur).sample(&mut rng);
                (start, dur)
            }
            GenMode::StartNormal => {
                let raw = match &normal {
                    Some(n) => n.sample(&mut rng).round(),
                    None => params.mean_slots.round(),
                };
                let start = (raw.max(0.0) as u64).min(horizon - 1);
                let span = (params.mean_slots.round() as u64).max(1);
                let dur = Uniform::new_inclusive(1, span).sample(&mut rng).min(horizon - start);
                (start, dur)
            }
        };
        requests.push(VmRequest::from_catalog(id, start, start + dur, vm_type)?);
    }
    WorkloadInstance::assemble(
        requests,
        pm_pool,
        5,
        None,
        Provenance::Synthetic(params.clone()),
    )
}

/// Processor-count to capacity-fraction buckets for trace ingestion.
/// Each entry is (minimum processors, fraction); the last entry whose minimum
/// is <= the job's processor count wins.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorMapping {
    buckets: Vec<(u64, Frac)>,
}

impl ProcessorMapping {
    pub fn new(buckets: Vec<(u64, Frac)>) -> Result<Self, WorkloadError> {
        if buckets.is_empty() {
            return Err(WorkloadError::InvalidParams("processor mapping needs a bucket".into()));
        }
        for pair in buckets.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(WorkloadError::InvalidParams(
                    "processor bucket minimums must increase".into(),
                ));
            }
        }
        for (_, f) in &buckets {
            if *f <= frac_int(0) || *f > frac_int(1) {
                return Err(WorkloadError::InvalidParams(
                    "bucket fractions must be in (0, 1]".into(),
                ));
            }
        }
        Ok(ProcessorMapping { buckets })
    }

    pub fn fraction_for(&self, processors: u64) -> Frac {
        let mut chosen = self.buckets[0].1;
        for &(min, f) in &self.buckets {
            if processors >= min {
                chosen = f;
            }
        }
        chosen
    }
}

impl Default for ProcessorMapping {
    fn default() -> Self {
        ProcessorMapping::new(vec![
            (1, frac(1, 16)),
            (2, frac(1, 8)),
            (4, frac(1, 4)),
            (8, frac(1, 2)),
        ])
        .expect("default buckets are valid")
    }
}

/// Outcome of a trace parse: the instance plus how many jobs were dropped for
/// non-positive runtime or processor counts.
#[derive(Debug)]
pub struct ParsedTrace {
    pub instance: WorkloadInstance,
    pub dropped_jobs: u64,
}

/// Parses a standard workload-format cluster trace: `;` lines are comments,
/// data lines carry 18 whitespace-separated numeric fields of which we use
/// job id (1), submit seconds (2), runtime seconds (4) and processors (5).
/// Submit seconds round up to the next slot; runtimes round to the nearest
/// slot with a one-slot floor.
pub fn parse_trace(
    path: &Path,
    slot_length_minutes: u32,
    mapping: &ProcessorMapping,
    pm_pool: Vec<PmSpec>,
) -> Result<ParsedTrace, WorkloadError> {
    let text = fs::read_to_string(path)
        .map_err(|e| WorkloadError::Io { path: path.display().to_string(), source: e })?;
    let slot_seconds = 60.0 * slot_length_minutes as f64;
    let mut requests = Vec::new();
    let mut dropped = 0u64;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(';') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 18 {
            return Err(WorkloadError::MalformedLine {
                line: line_no,
                reason: format!("expected 18 fields, found {}", fields.len()),
            });
        }
        let id: VmId = fields[0].parse().map_err(|_| WorkloadError::MalformedLine {
            line: line_no,
            reason: "job id is not a non-negative integer".into(),
        })?;
        let numeric = |i: usize| -> Result<f64, WorkloadError> {
            fields[i].parse::<f64>().map_err(|_| WorkloadError::MalformedLine {
                line: line_no,
                reason: format!("field {} is not numeric", i + 1),
            })
        };
        let submit = numeric(1)?;
        let runtime = numeric(3)?;
        let processors = numeric(4)?;
        if runtime <= 0.0 || processors < 1.0 || submit < 0.0 {
            dropped += 1;
            continue;
        }
        let start_slot = (submit / slot_seconds).ceil() as u64;
        let duration = ((runtime / slot_seconds).round() as u64).max(1);
        let fraction = mapping.fraction_for(processors as u64);
        requests.push(VmRequest::new(id, start_slot, start_slot + duration, fraction)?);
    }
    if requests.is_empty() {
        return Err(WorkloadError::EmptyTrace { path: path.display().to_string() });
    }
    let instance = WorkloadInstance::assemble(
        requests,
        pm_pool,
        slot_length_minutes,
        None,
        Provenance::Trace(path.display().to_string()),
    )?;
    Ok(ParsedTrace { instance, dropped_jobs: dropped })
}

#[derive(Debug, thiserror::Error)]
pub enum WorkloadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("trace line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("trace {path} contains no usable jobs")]
    EmptyTrace { path: String },
    #[error("duplicate request id {id}")]
    DuplicateId { id: VmId },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("instance file {path}: {reason}")]
    BadInstance { path: String, reason: String },
}

// ---- instance JSON interchange -------------------------------------------

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    slot_config: SlotConfigDoc,
    pms: Vec<PmGroupDoc>,
    requests: Vec<RequestDoc>,
}

#[derive(Serialize, Deserialize)]
struct SlotConfigDoc {
    slot_length_minutes: u32,
    horizon_slots: u64,
}

#[derive(Serialize, Deserialize)]
struct PmGroupDoc {
    #[serde(rename = "type")]
    pm_type: u8,
    count: u32,
}

#[derive(Serialize, Deserialize)]
struct RequestDoc {
    id: VmId,
    start: u64,
    end: u64,
    fraction_num: i64,
    fraction_den: i64,
    vm_type: Option<u8>,
}

/// Serializes the instance to the interchange JSON document.
pub fn instance_to_json(instance: &WorkloadInstance) -> String {
    let mut counts: BTreeMap<u8, u32> = BTreeMap::new();
    for spec in &instance.pm_pool {
        *counts.entry(spec.pm_type.code()).or_insert(0) += 1;
    }
    let doc = InstanceDoc {
        slot_config: SlotConfigDoc {
            slot_length_minutes: instance.slot_config.slot_length_minutes,
            horizon_slots: instance.slot_config.horizon_slots,
        },
        pms: counts.into_iter().map(|(pm_type, count)| PmGroupDoc { pm_type, count }).collect(),
        requests: instance
            .requests
            .iter()
            .map(|r| RequestDoc {
                id: r.id,
                start: r.start_slot,
                end: r.end_slot,
                fraction_num: *r.capacity_fraction.numer(),
                fraction_den: *r.capacity_fraction.denom(),
                vm_type: r.vm_type.map(VmType::code),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("instance serializes");
    text.push('\n');
    text
}

pub fn save_instance(instance: &WorkloadInstance, path: &Path) -> Result<(), WorkloadError> {
    fs::write(path, instance_to_json(instance))
        .map_err(|e| WorkloadError::Io { path: path.display().to_string(), source: e })
}

/// Parses the interchange JSON document produced by [`instance_to_json`].
pub fn instance_from_json(text: &str, origin: &str) -> Result<WorkloadInstance, WorkloadError> {
    let doc: InstanceDoc = serde_json::from_str(text)
        .map_err(|e| WorkloadError::BadInstance { path: origin.into(), reason: e.to_string() })?;
    let mut pool = Vec::new();
    for group in &doc.pms {
        let pm_type = PmType::from_code(group.pm_type).ok_or_else(|| WorkloadError::BadInstance {
            path: origin.into(),
            reason: format!("unknown pm type {}", group.pm_type),
        })?;
        pool.extend(std::iter::repeat_n(PmSpec::catalog(pm_type), group.count as usize));
    }
    let mut requests = Vec::with_capacity(doc.requests.len());
    for rd in &doc.requests {
        if rd.fraction_den == 0 {
            return Err(WorkloadError::BadInstance {
                path: origin.into(),
                reason: format!("request {}: zero fraction denominator", rd.id),
            });
        }
        let fraction = frac(rd.fraction_num, rd.fraction_den);
        let mut request = VmRequest::new(rd.id, rd.start, rd.end, fraction)?;
        if let Some(code) = rd.vm_type {
            let vm_type = VmType::from_code(code).ok_or_else(|| WorkloadError::BadInstance {
                path: origin.into(),
                reason: format!("request {}: unknown vm type {code}", rd.id),
            })?;
            if vm_type.fraction() != fraction {
                return Err(WorkloadError::BadInstance {
                    path: origin.into(),
                    reason: format!(
                        "request {}: fraction {fraction} does not match vm type {vm_type}",
                        rd.id
                    ),
                });
            }
            request.vm_type = Some(vm_type);
            request.pm_family = Some(vm_type.family());
        }
        requests.push(request);
    }
    let max_end = requests.iter().map(|r| r.end_slot + 1).max().unwrap_or(0);
    if doc.slot_config.horizon_slots < max_end.saturating_sub(1) {
        return Err(WorkloadError::BadInstance {
            path: origin.into(),
            reason: "horizon ends before the last request".into(),
        });
    }
    WorkloadInstance::assemble(
        requests,
        pool,
        doc.slot_config.slot_length_minutes,
        Some(doc.slot_config.horizon_slots),
        Provenance::Trace(origin.to_string()),
    )
}

pub fn load_instance(path: &Path) -> Result<WorkloadInstance, WorkloadError> {
    let text = fs::read_to_string(path)
        .map_err(|e| WorkloadError::Io { path: path.display().to_string(), source: e })?;
    instance_from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn pool_builder_emits_catalog_specs_in_type_order() {
        let pool = default_pm_pool(1, 1, 1);
        assert_eq!(pool.len(), 3);
        assert_eq!(pool[0], PmSpec::catalog(PmType::Type1));
        assert_eq!(pool[0].compute_units, 16.0);
        assert_eq!(pool[1].memory_gb, 136.8);
        assert_eq!(pool[2].compute_units, 40.0);
        assert_eq!(pool[2].memory_gb, 14.0);
        assert!(pool.iter().all(|s| s.storage_gb == 3380.0));
        assert!(default_pm_pool(0, 0, 0).is_empty());
        let heavy = default_pm_pool(10, 0, 0);
        assert_eq!(heavy.len(), 10);
        assert!(heavy.iter().all(|s| s.pm_type == PmType::Type1));
    }

    #[test]
    fn single_vm_generation_yields_valid_request() {
        let params = SyntheticParams { n_vms: 1, seed: 7, ..SyntheticParams::default() };
        let inst = generate_synthetic(&params, default_pm_pool(1, 1, 1)).unwrap();
        assert_eq!(inst.requests.len(), 1);
        let r = &inst.requests[0];
        assert!(r.duration_slots() >= 1);
        assert!(r.end_slot < inst.slot_config.horizon_slots);
        assert!(r.vm_type.is_some());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let params = SyntheticParams { n_vms: 200, seed: 42, ..SyntheticParams::default() };
        let a = generate_synthetic(&params, default_pm_pool(2, 2, 2)).unwrap();
        let b = generate_synthetic(&params, default_pm_pool(2, 2, 2)).unwrap();
        assert_eq!(a.requests, b.requests);
        let c = generate_synthetic(
            &SyntheticParams { seed: 43, ..params },
            default_pm_pool(2, 2, 2),
        )
        .unwrap();
        assert_ne!(a.requests, c.requests);
    }

    #[test]
    fn duration_sample_mean_matches_parameters() {
        let params = SyntheticParams { n_vms: 10_000, seed: 11, ..SyntheticParams::default() };
        let inst = generate_synthetic(&params, default_pm_pool(1, 1, 1)).unwrap();
        let mean = inst.requests.iter().map(|r| r.duration_slots() as f64).sum::<f64>()
            / inst.requests.len() as f64;
        // 3 standard errors around the configured mean; truncation bias at
        // [1, 4 * mean] is far below one slot.
        assert!((mean - 864.0).abs() < 3.0 * 288.0 / 100.0, "sample mean {mean}");
    }

    #[test]
    fn zero_vms_is_rejected() {
        let params = SyntheticParams { n_vms: 0, ..SyntheticParams::default() };
        assert!(matches!(
            generate_synthetic(&params, vec![]),
            Err(WorkloadError::InvalidParams(_))
        ));
    }

    #[test]
    fn requests_are_sorted_by_start_then_id() {
        let params = SyntheticParams { n_vms: 500, seed: 3, ..SyntheticParams::default() };
        let inst = generate_synthetic(&params, default_pm_pool(1, 1, 1)).unwrap();
        for pair in inst.requests.windows(2) {
            assert!((pair[0].start_slot, pair[0].id) < (pair[1].start_slot, pair[1].id));
        }
    }

    #[test]
    fn processor_buckets_map_to_fractions() {
        let m = ProcessorMapping::default();
        assert_eq!(m.fraction_for(1), frac(1, 16));
        assert_eq!(m.fraction_for(2), frac(1, 8));
        assert_eq!(m.fraction_for(3), frac(1, 8));
        assert_eq!(m.fraction_for(4), frac(1, 4));
        assert_eq!(m.fraction_for(7), frac(1, 4));
        assert_eq!(m.fraction_for(8), frac(1, 2));
        assert_eq!(m.fraction_for(4096), frac(1, 2));
    }

    fn write_trace(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    const PAD: &str = "0 0 0 0 0 0 0 0 0 0 0 0 0"; // fields 6..18 are unused

    #[test]
    fn trace_line_converts_seconds_to_slots() {
        let f = write_trace(&[
            "; Comment: header",
            &format!("1 300 10 4200 1 {PAD}"),
        ]);
        let parsed =
            parse_trace(f.path(), 5, &ProcessorMapping::default(), default_pm_pool(1, 0, 0))
                .unwrap();
        assert_eq!(parsed.dropped_jobs, 0);
        let r = &parsed.instance.requests[0];
        assert_eq!((r.start_slot, r.end_slot), (1, 15));
        assert_eq!(r.capacity_fraction, frac(1, 16));
        assert_eq!(r.pm_family, None);
    }

    #[test]
    fn nonpositive_runtime_or_processors_are_dropped_and_counted() {
        let f = write_trace(&[
            &format!("1 0 10 -1 4 {PAD}"),
            &format!("2 0 10 600 0 {PAD}"),
            &format!("3 0 10 600 2 {PAD}"),
        ]);
        let parsed =
            parse_trace(f.path(), 5, &ProcessorMapping::default(), default_pm_pool(1, 0, 0))
                .unwrap();
        assert_eq!(parsed.dropped_jobs, 2);
        assert_eq!(parsed.instance.requests.len(), 1);
        assert_eq!(parsed.instance.requests[0].id, 3);
    }

    #[test]
    fn short_runtime_rounds_up_to_one_slot() {
        let f = write_trace(&[&format!("9 0 0 30 1 {PAD}")]);
        let parsed =
            parse_trace(f.path(), 5, &ProcessorMapping::default(), default_pm_pool(1, 0, 0))
                .unwrap();
        assert_eq!(parsed.instance.requests[0].duration_slots(), 1);
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        let f = write_trace(&["; ok", "1 2 3"]);
        let err =
            parse_trace(f.path(), 5, &ProcessorMapping::default(), vec![]).unwrap_err();
        match err {
            WorkloadError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        let f = write_trace(&[&format!("1 abc 10 600 1 {PAD}")]);
        assert!(matches!(
            parse_trace(f.path(), 5, &ProcessorMapping::default(), vec![]),
            Err(WorkloadError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn comment_only_trace_is_empty() {
        let f = write_trace(&["; nothing", ";", "; more"]);
        assert!(matches!(
            parse_trace(f.path(), 5, &ProcessorMapping::default(), vec![]),
            Err(WorkloadError::EmptyTrace { .. })
        ));
    }

    #[test]
    fn instance_json_round_trips() {
        let params = SyntheticParams { n_vms: 60, seed: 5, ..SyntheticParams::default() };
        let inst = generate_synthetic(&params, default_pm_pool(2, 1, 1)).unwrap();
        let text = instance_to_json(&inst);
        let back = instance_from_json(&text, "mem").unwrap();
        assert_eq!(inst.requests, back.requests);
        assert_eq!(inst.pm_pool, back.pm_pool);
        assert_eq!(inst.slot_config, back.slot_config);
        // A second serialization is byte-identical.
        assert_eq!(text, instance_to_json(&back));
    }

    #[test]
    fn instance_json_rejects_fraction_type_mismatch() {
        let text = r#"{
            "slot_config": {"slot_length_minutes": 5, "horizon_slots": 20},
            "pms": [{"type": 1, "count": 1}],
            "requests": [
                {"id": 1, "start": 0, "end": 4, "fraction_num": 1, "fraction_den": 8, "vm_type": 1}
            ]
        }"#;
        assert!(matches!(
            instance_from_json(text, "mem"),
            Err(WorkloadError::BadInstance { .. })
        ));
    }
}
