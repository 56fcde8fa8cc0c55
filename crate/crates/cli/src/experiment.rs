//! Experiment files for `vmlb compare`: which workloads to run, which
//! algorithms over them, how often, and where the outputs go.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vmlb_core::model::Frac;
use vmlb_core::sched::{Algorithm, SchedulerConfig};
use vmlb_core::workload::{
    default_pm_pool, generate_synthetic, load_instance, GenMode, SyntheticParams, WorkloadError,
    WorkloadInstance,
};

use crate::{CliError, TuningArgs};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub workloads: Vec<WorkloadSource>,
    pub algorithms: Vec<AlgorithmEntry>,
    /// Runs per workload/algorithm pair. Synthetic workloads are redrawn
    /// with `seed + repetition`; the random placer reseeds the same way.
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Output directory; flags and $VMLB_OUT_DIR take over when absent.
    #[serde(default)]
    pub outputs: Option<String>,
    #[serde(default = "default_series_step")]
    pub series_step_slots: u64,
}

fn default_repetitions() -> u32 {
    10
}

fn default_series_step() -> u64 {
    288
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.workloads.is_empty() {
            return Err(CliError::usage("experiment lists no workloads"));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::usage("experiment lists no algorithms"));
        }
        if self.repetitions == 0 {
            return Err(CliError::usage("repetitions must be at least 1"));
        }
        if self.series_step_slots == 0 {
            return Err(CliError::usage("series_step_slots must be at least 1"));
        }
        Ok(())
    }
}

/// One workload: either a saved instance file or generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    Instance { path: String },
    Synthetic(SyntheticEntry),
}

impl WorkloadSource {
    /// Short name used in report rows and output file names.
    pub fn label(&self) -> String {
        match self {
            WorkloadSource::Instance { path } => {
                let stem = Path::new(path)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.clone());
                sanitize(&stem)
            }
            WorkloadSource::Synthetic(entry) => {
                format!("synthetic-n{}-s{}", entry.n_vms, entry.seed.unwrap_or(1))
            }
        }
    }

    /// Builds the instance for one repetition. Saved instances are identical
    /// across repetitions; synthetic ones advance their seed by `rep`.
    pub fn materialize(&self, rep: u32) -> Result<WorkloadInstance, CliError> {
        match self {
            WorkloadSource::Instance { path } => {
                let path = PathBuf::from(path);
                load_instance(&path).map_err(|e| load_error(&path, e))
            }
            WorkloadSource::Synthetic(entry) => entry.generate(rep),
        }
    }
}

/// Replaces filesystem-hostile characters so labels can name output files.
fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '-' })
        .collect()
}

pub fn load_error(path: &Path, err: WorkloadError) -> CliError {
    CliError::io(path, err)
}

/// Generator parameters with everything but the size optional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEntry {
    pub n_vms: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mean_slots: Option<f64>,
    #[serde(default)]
    pub std_slots: Option<f64>,
    #[serde(default)]
    pub type_distribution: Option<[f64; 8]>,
    #[serde(default)]
    pub horizon_slots: Option<u64>,
    #[serde(default)]
    pub mode: Option<GenMode>,
    /// Machine counts for the three hardware families.
    #[serde(default)]
    pub pms: Option<[u32; 3]>,
}

impl SyntheticEntry {
    fn generate(&self, rep: u32) -> Result<WorkloadInstance, CliError> {
        let defaults = SyntheticParams::default();
        let params = SyntheticParams {
            n_vms: self.n_vms,
            mean_slots: self.mean_slots.unwrap_or(defaults.mean_slots),
            std_slots: self.std_slots.unwrap_or(defaults.std_slots),
            type_distribution: self.type_distribution.unwrap_or(defaults.type_distribution),
            seed: self.seed.unwrap_or(defaults.seed) + u64::from(rep),
            horizon_slots: self.horizon_slots,
            mode: self.mode.unwrap_or(defaults.mode),
        };
        let [n1, n2, n3] = self.pms.unwrap_or([4, 2, 2]);
        generate_synthetic(&params, default_pm_pool(n1, n2, n3))
            .map_err(|e| CliError::usage(format!("synthetic workload: {e}")))
    }
}

/// One algorithm plus its knobs, as written in the experiment file.
/// Fractions are strings like "1/8" or "192".
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub algorithm: String,
    #[serde(default)]
    pub k: Option<u32>,
    #[serde(default)]
    pub f: Option<String>,
    #[serde(default)]
    pub cm_bound: Option<String>,
    #[serde(default)]
    pub pmg_factor: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl AlgorithmEntry {
    pub fn to_config(&self) -> Result<SchedulerConfig, CliError> {
        let tuning = TuningArgs {
            k: self.k,
            f: self.f.clone(),
            cm_bound: self.cm_bound.clone(),
            pmg_factor: self.pmg_factor.clone(),
            seed: self.seed,
        };
        let algorithm = parse_algorithm(&self.algorithm)?;
        build_config(algorithm, &tuning)
    }
}

/// Accepts the canonical names case-insensitively, with `-`/`_` ignored,
/// so `prepartition-off` and `PrepartitionOff` both work.
pub fn parse_algorithm(name: &str) -> Result<Algorithm, CliError> {
    let compact: String = name.chars().filter(|c| *c != '-' && *c != '_').collect();
    compact.parse().map_err(|_| {
        let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
        CliError::usage(format!("unknown algorithm `{name}`; expected one of {known:?}"))
    })
}

pub fn parse_frac(name: &str, text: &str) -> Result<Frac, CliError> {
    text.trim()
        .parse::<Frac>()
        .map_err(|e| CliError::usage(format!("{name} `{text}`: expected a ratio like 1/8 or 192 ({e})")))
}

/// Applies tuning flags on top of the algorithm's defaults, rejecting any
/// knob the algorithm does not read.
pub fn build_config(algorithm: Algorithm, tuning: &TuningArgs) -> Result<SchedulerConfig, CliError> {
    let mut cfg = SchedulerConfig::new(algorithm);
    if let Some(k) = tuning.k {
        if !algorithm.uses_k() {
            return Err(CliError::usage(format!(
                "--k applies only to the partition-first algorithms, not {algorithm}"
            )));
        }
        cfg.k = k;
    }
    if let Some(f) = &tuning.f {
        if !algorithm.uses_f() {
            return Err(CliError::usage(format!(
                "--f applies only to PrepartitionOn2, not {algorithm}"
            )));
        }
        cfg.f = parse_frac("--f", f)?;
    }
    if let Some(bound) = &tuning.cm_bound {
        if !algorithm.uses_f() {
            return Err(CliError::usage(format!(
                "--cm-bound applies only to PrepartitionOn2, not {algorithm}"
            )));
        }
        cfg.cm_bound = Some(parse_frac("--cm-bound", bound)?);
    }
    if let Some(factor) = &tuning.pmg_factor {
        if algorithm != Algorithm::Pmg {
            return Err(CliError::usage(format!(
                "--pmg-factor applies only to PMG, not {algorithm}"
            )));
        }
        cfg.pmg_factor = parse_frac("--pmg-factor", factor)?;
    }
    if let Some(seed) = tuning.seed {
        if !algorithm.uses_seed() {
            return Err(CliError::usage(format!(
                "--seed applies only to Random, not {algorithm}"
            )));
        }
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

/// The `k_or_f` report column: whichever knob steers this algorithm.
pub fn knob_label(cfg: &SchedulerConfig) -> String {
    if cfg.algorithm.uses_k() {
        cfg.k.to_string()
    } else if cfg.algorithm.uses_f() {
        cfg.f.to_string()
    } else {
        String::new()
    }
}
