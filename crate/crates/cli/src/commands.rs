//! The five `vmlb` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use vmlb_core::metrics::{self, MetricReport, CSV_HEADER};
use vmlb_core::model::frac_to_f64;
use vmlb_core::oracle::{self, OracleError, OracleLimits};
use vmlb_core::sched::{
    decisions_to_jsonl, run as run_scheduler, Algorithm, ScheduleError, SchedulerConfig,
    SchedulerOutcome,
};
use vmlb_core::verify::{self, BoundCheck};
use vmlb_core::workload::{
    self, default_pm_pool, load_instance, GenMode, SyntheticParams, WorkloadError,
    WorkloadInstance,
};

use crate::experiment::{
    build_config, knob_label, load_error, parse_algorithm, ExperimentPlan, WorkloadSource,
};
use crate::{
    CliError, CompareArgs, GenerateArgs, ModeArg, OracleArgs, RunArgs, VerifyArgs,
};

// ---- shared plumbing ------------------------------------------------------

/// Output directory: the flag, else $VMLB_OUT_DIR, else ./vmlb-out.
fn resolve_out_dir(flag: Option<PathBuf>, from_plan: Option<&str>) -> PathBuf {
    flag.or_else(|| from_plan.map(PathBuf::from))
        .or_else(|| std::env::var_os("VMLB_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("vmlb-out"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::io(path, e))
}

fn schedule_error(err: ScheduleError) -> CliError {
    match err {
        ScheduleError::Infeasible { .. } | ScheduleError::Place(_) => {
            CliError::infeasible(err.to_string())
        }
        other => CliError::usage(other.to_string()),
    }
}

fn load(path: &Path) -> Result<WorkloadInstance, CliError> {
    load_instance(path).map_err(|e| load_error(path, e))
}

/// Algorithm-plus-knob tag used in output file names, e.g.
/// `prepartitionoff-k4` or `prepartitionon2-f1-8`.
fn file_label(cfg: &SchedulerConfig) -> String {
    let base = cfg.algorithm.name().to_lowercase();
    let knob = knob_label(cfg).replace('/', "-");
    if knob.is_empty() {
        base
    } else if cfg.algorithm.uses_k() {
        format!("{base}-k{knob}")
    } else {
        format!("{base}-f{knob}")
    }
}

fn write_imd_series(path: &Path, schedule: &vmlb_core::model::Schedule, step: u64) -> Result<(), CliError> {
    let mut out = String::from("slot,imd\n");
    for (slot, value) in metrics::imbalance_series(schedule, step) {
        out.push_str(&format!("{slot},{value:.6}\n"));
    }
    write_file(path, &out)
}

fn timed_run(
    instance: &WorkloadInstance,
    cfg: &SchedulerConfig,
) -> Result<(SchedulerOutcome, MetricReport), CliError> {
    let started = Instant::now();
    let outcome = run_scheduler(instance, cfg).map_err(schedule_error)?;
    let wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let report = MetricReport::from_schedule(&outcome.schedule, wall_ms);
    Ok((outcome, report))
}

// ---- generate -------------------------------------------------------------

fn parse_type_dist(text: &str) -> Result<[f64; 8], CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 8 {
        return Err(CliError::usage(format!(
            "--type-dist needs exactly 8 comma-separated weights, got {}",
            parts.len()
        )));
    }
    let mut weights = [0.0; 8];
    for (slot, part) in weights.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|e| CliError::usage(format!("--type-dist weight `{part}`: {e}")))?;
    }
    Ok(weights)
}

fn parse_pm_counts(text: &str) -> Result<(u32, u32, u32), CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!(
            "--pms needs exactly 3 comma-separated counts, got {}",
            parts.len()
        )));
    }
    let mut counts = [0u32; 3];
    for (slot, part) in counts.iter_mut().zip(&parts) {
        *slot = part
            .parse::<u32>()
            .map_err(|e| CliError::usage(format!("--pms count `{part}`: {e}")))?;
    }
    Ok((counts[0], counts[1], counts[2]))
}

pub fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let defaults = SyntheticParams::default();
    let params = SyntheticParams {
        n_vms: args.n,
        mean_slots: args.mean_slots,
        std_slots: args.std_slots,
        type_distribution: match &args.type_dist {
            Some(text) => parse_type_dist(text)?,
            None => defaults.type_distribution,
        },
        seed: args.seed,
        horizon_slots: args.horizon_slots,
        mode: match args.mode {
            ModeArg::DurationNormal => GenMode::DurationNormal,
            ModeArg::StartNormal => GenMode::StartNormal,
        },
    };
    let (n1, n2, n3) = parse_pm_counts(&args.pms)?;
    let instance = workload::generate_synthetic(&params, default_pm_pool(n1, n2, n3))
        .map_err(|e| match e {
            WorkloadError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::usage(other.to_string()),
        })?;
    workload::save_instance(&instance, &args.out).map_err(|e| load_error(&args.out, e))?;
    println!(
        "wrote {} requests over {} machines (horizon {} slots) to {}",
        instance.n_requests(),
        instance.n_pms(),
        instance.slot_config.horizon_slots,
        args.out.display()
    );
    Ok(())
}

// ---- run ------------------------------------------------------------------

pub fn run(args: RunArgs) -> Result<(), CliError> {
    let algorithm = parse_algorithm(&args.algorithm)?;
    let cfg = build_config(algorithm, &args.tuning)?;
    if args.series_step_slots == 0 {
        return Err(CliError::usage("--series-step-slots must be at least 1"));
    }
    let instance = load(&args.instance)?;
    let (outcome, report) = timed_run(&instance, &cfg)?;

    println!("{CSV_HEADER}");
    println!(
        "{}",
        report.csv_row(algorithm.name(), instance.n_requests(), &knob_label(&cfg))
    );

    let dir = resolve_out_dir(args.out_dir, None);
    ensure_dir(&dir)?;
    let label = file_label(&cfg);
    let decisions_path = dir.join(format!("decisions_{label}.jsonl"));
    write_file(&decisions_path, &decisions_to_jsonl(&outcome.decisions_log))?;
    let imd_path = dir.join(format!("imd_{label}.csv"));
    write_imd_series(&imd_path, &outcome.schedule, args.series_step_slots)?;
    eprintln!("decision log: {}", decisions_path.display());
    eprintln!("imbalance series: {}", imd_path.display());
    Ok(())
}

// ---- compare --------------------------------------------------------------

/// Running means for one workload/algorithm pair across repetitions.
#[derive(Default)]
struct Aggregate {
    runs: usize,
    n_vms: usize,
    utilization: f64,
    imbalance: f64,
    makespan: f64,
    cm_max: f64,
    partitions: f64,
    wall_ms: f64,
}

impl Aggregate {
    fn add(&mut self, n_vms: usize, report: &MetricReport) {
        self.runs += 1;
        self.n_vms = n_vms;
        self.utilization += report.avg_utilization;
        self.imbalance += report.imbalance_degree;
        self.makespan += report.makespan_slots as f64;
        self.cm_max += frac_to_f64(report.cm_max);
        self.partitions += report.partition_count as f64;
        self.wall_ms += report.wall_time_ms;
    }

    fn row(&self, workload: &str, algorithm: &str, knob: &str) -> String {
        let n = self.runs as f64;
        format!(
            "{workload},{algorithm},{knob},{},{:.6},{:.6},{:.1},{:.6},{:.1},{:.3}",
            self.n_vms,
            self.utilization / n,
            self.imbalance / n,
            self.makespan / n,
            self.cm_max / n,
            self.partitions / n,
            self.wall_ms / n,
        )
    }
}

const SUMMARY_HEADER: &str =
    "workload,algorithm,k_or_f,n_vms,avg_utilization,imd,makespan_slots,cm_max,partitions,wall_time_ms";

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.experiment)
        .map_err(|e| CliError::io(&args.experiment, e))?;
    let mut plan: ExperimentPlan = serde_json::from_str(&text).map_err(|e| {
        CliError::usage(format!("experiment file {}: {e}", args.experiment.display()))
    })?;
    if let Some(reps) = args.repetitions {
        plan.repetitions = reps;
    }
    if let Some(dir) = &args.out_dir {
        plan.outputs = Some(dir.to_string_lossy().into_owned());
    }
    if let Some(step) = args.series_step_slots {
        plan.series_step_slots = step;
    }
    plan.validate()?;

    let dir = resolve_out_dir(None, plan.outputs.as_deref());
    ensure_dir(&dir)?;

    let mut run_rows = vec![format!("workload,rep,{CSV_HEADER}")];
    let mut summary_rows = vec![SUMMARY_HEADER.to_string()];
    let mut failures: Vec<String> = Vec::new();
    let mut total_runs = 0usize;

    for source in &plan.workloads {
        let workload_label = source.label();
        // Saved instances are identical across repetitions: load them once.
        let mut cached: Option<WorkloadInstance> = None;
        for entry in &plan.algorithms {
            let base_cfg = entry.to_config()?;
            let mut agg = Aggregate::default();
            for rep in 0..plan.repetitions {
                let instance = match source {
                    WorkloadSource::Instance { .. } => {
                        if cached.is_none() {
                            cached = Some(source.materialize(0)?);
                        }
                        cached.clone().expect("cached above")
                    }
                    WorkloadSource::Synthetic(_) => source.materialize(rep)?,
                };
                let mut cfg = base_cfg.clone();
                if cfg.algorithm.uses_seed() {
                    cfg.seed = entry.seed.unwrap_or(0) + u64::from(rep);
                }
                total_runs += 1;
                match timed_run(&instance, &cfg) {
                    Ok((outcome, report)) => {
                        run_rows.push(format!(
                            "{workload_label},{rep},{}",
                            report.csv_row(
                                cfg.algorithm.name(),
                                instance.n_requests(),
                                &knob_label(&cfg)
                            )
                        ));
                        agg.add(instance.n_requests(), &report);
                        if rep == 0 {
                            let series = dir.join(format!(
                                "imd_{workload_label}_{}.csv",
                                file_label(&cfg)
                            ));
                            write_imd_series(&series, &outcome.schedule, plan.series_step_slots)?;
                        }
                    }
                    Err(err) => failures.push(format!(
                        "{workload_label} rep {rep} {}: {err}",
                        cfg.algorithm.name()
                    )),
                }
            }
            if agg.runs > 0 {
                summary_rows.push(agg.row(
                    &workload_label,
                    base_cfg.algorithm.name(),
                    &knob_label(&base_cfg),
                ));
            }
        }
    }

    write_file(&dir.join("runs.csv"), &(run_rows.join("\n") + "\n"))?;
    write_file(&dir.join("summary.csv"), &(summary_rows.join("\n") + "\n"))?;
    for row in &summary_rows {
        println!("{row}");
    }
    eprintln!("reports in {}", dir.display());

    if failures.is_empty() {
        Ok(())
    } else {
        for failure in &failures {
            eprintln!("failed: {failure}");
        }
        Err(CliError::infeasible(format!(
            "{} of {total_runs} runs failed",
            failures.len()
        )))
    }
}

// ---- verify ---------------------------------------------------------------

pub fn verify(args: VerifyArgs) -> Result<(), CliError> {
    if args.instances == 0 {
        return Err(CliError::usage("--instances must be at least 1"));
    }
    println!(
        "checking provable bounds on {} randomized instances (base seed {})",
        args.instances, args.seed
    );
    let checks = verify::verify_ratio_suite(args.instances, args.seed)
        .map_err(|e| CliError::infeasible(format!("bound suite failed: {e}")))?;

    let mut by_label: BTreeMap<&str, (usize, f64, Vec<&BoundCheck>)> = BTreeMap::new();
    for check in &checks {
        let entry = by_label.entry(check.label.as_str()).or_insert((0, 0.0, Vec::new()));
        entry.0 += 1;
        entry.1 = entry.1.max(check.ratio());
        if !check.holds() {
            entry.2.push(check);
        }
    }
    let mut violated: Option<&BoundCheck> = None;
    for (label, (count, worst, violations)) in &by_label {
        let status = if violations.is_empty() { "holds" } else { "VIOLATED" };
        println!("  {label}: {count} instances, worst achieved/optimal {worst:.4} — {status}");
        if violated.is_none() {
            violated = violations.first().copied();
        }
    }

    // Independently replay the equal partitioner's decision logs.
    let mut replay_failure: Option<(u64, String)> = None;
    for offset in 0..args.instances {
        let seed = args.seed + offset;
        let instance = verify::slack_instance(seed);
        let cfg = SchedulerConfig::new(Algorithm::PrepartitionOn2);
        let outcome = run_scheduler(&instance, &cfg).map_err(schedule_error)?;
        match verify::replay_equal_partition_invariants(&instance, &cfg, &outcome) {
            Ok(report) => {
                if report.segments_fit_budget && !report.budget_excesses.is_empty() {
                    replay_failure = Some((
                        seed,
                        format!(
                            "budget exceeded on machines {:?} although every segment fit",
                            report.budget_excesses
                        ),
                    ));
                    break;
                }
            }
            Err(err) => {
                replay_failure = Some((seed, err.to_string()));
                break;
            }
        }
    }
    match &replay_failure {
        None => println!(
            "  equal-partition replay: {} decision logs re-derived — consistent",
            args.instances
        ),
        Some((seed, reason)) => {
            println!("  equal-partition replay: seed {seed} INCONSISTENT: {reason}")
        }
    }

    if violated.is_none() && replay_failure.is_none() {
        println!("all bounds hold");
        return Ok(());
    }

    // Save whatever broke so it can be rerun and inspected.
    let dir = resolve_out_dir(args.out_dir, None);
    ensure_dir(&dir)?;
    let (seed, detail) = match (violated, &replay_failure) {
        (Some(check), _) => (
            check.seed,
            format!(
                "{}: achieved {} exceeds limit {} (optimal {})",
                check.label, check.achieved, check.limit, check.opt
            ),
        ),
        (None, Some((seed, reason))) => (*seed, reason.clone()),
        (None, None) => unreachable!("handled above"),
    };
    let path = dir.join(format!("counterexample-seed{seed}.json"));
    let instance = verify::slack_instance(seed);
    write_file(&path, &workload::instance_to_json(&instance))?;
    Err(CliError::infeasible(format!(
        "bound violated — {detail}; instance saved to {}",
        path.display()
    )))
}

// ---- oracle ---------------------------------------------------------------

pub fn oracle(args: OracleArgs) -> Result<(), CliError> {
    let instance = load(&args.instance)?;
    let limits = OracleLimits { max_requests: args.max_requests, max_pms: args.max_pms };
    let result = oracle::solve_exact(&instance, limits).map_err(|e| match e {
        OracleError::TooLarge { .. } => CliError::usage(e.to_string()),
        OracleError::Infeasible => CliError::infeasible(e.to_string()),
    })?;
    let assignment: Vec<serde_json::Value> = result
        .assignment
        .iter()
        .map(|(vm, pm)| serde_json::json!({ "vm": vm, "pm": pm }))
        .collect();
    let doc = serde_json::json!({
        "opt_cm_max": result.opt_cm_max.to_string(),
        "p0": oracle::lower_bound_p0(&instance).to_string(),
        "explored_nodes": result.explored_nodes,
        "assignment": assignment,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("plain JSON document"));
    Ok(())
}
