//! Executes every (seed, cell) pair of a configuration and writes the report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use interpcl_core::diagnostics::{loss_barrier, variance_ratio, BarrierProfile, VarianceReport};
use interpcl_core::interp::pad_head;
use interpcl_core::metrics::{compute_metrics, MetricBundle};
use interpcl_core::scenarios::{build_stream, generate_synthetic, load_csv, Dataset, Pool, TaskStream};
use interpcl_core::trainer::{run_sequence, ClMethod, Event, RunOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::csv_out::{write_report_csvs, write_text};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub transition: String,
    pub profile: BarrierProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub transition: String,
    pub report: VarianceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub task: usize,
    pub shifts: IndexMap<String, f64>,
    pub lambdas: IndexMap<String, f64>,
}

/// Everything one (seed, method) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub label: String,
    pub method: ClMethod,
    pub metrics: MetricBundle,
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Mean accuracy over the tasks seen so far, after each task.
    pub accuracy_curve: Vec<f64>,
    pub barriers: Vec<BarrierRow>,
    pub variance: Vec<VarianceRow>,
    pub lambda_trace: Vec<LambdaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema: u32,
    pub config_hash: String,
    pub scenario_hash: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{} is not a report: {e}", path.display()))
    }
}

/// Wall-clock timings, kept out of the data files.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Meta {
    pub started_unix: u64,
    pub total_seconds: f64,
    pub jobs: usize,
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellTiming {
    pub seed: u64,
    pub label: String,
    pub train_seconds: f64,
    pub diagnostics_seconds: f64,
}

pub fn build_pool(cfg: &ExperimentConfig, seed: u64) -> interpcl_core::Result<Pool> {
    if let Some(drift) = &cfg.scenario.synthetic {
        let mut drift = drift.clone();
        drift.seed = drift.seed.wrapping_add(seed);
        return generate_synthetic(&drift);
    }
    let src = cfg.scenario.csv.as_ref().expect("validated scenario");
    let schema = src.schema();
    let sets = src
        .paths
        .iter()
        .map(|p| load_csv(p, &schema))
        .collect::<interpcl_core::Result<Vec<Dataset>>>()?;
    Pool::from_datasets(&sets)
}

pub fn build_seed_stream(cfg: &ExperimentConfig, seed: u64) -> interpcl_core::Result<TaskStream> {
    build_stream(&build_pool(cfg, seed)?, cfg.scenario.stream, seed)
}

/// Barriers between consecutive carried models. The earlier model's head is
/// widened with the later model's extra rows; the loss is measured on the
/// later task's evaluation set.
pub fn transition_barriers(out: &RunOutcome, stream: &TaskStream, grid: usize) -> interpcl_core::Result<Vec<BarrierRow>> {
    (1..out.carried.len())
        .map(|t| {
            let a = pad_head(&out.carried[t - 1], &out.carried[t])?;
            let profile = loss_barrier(&a, &out.carried[t], stream.eval_set(t), grid)?;
            Ok(BarrierRow {
                transition: format!("{}->{}", t - 1, t),
                profile,
            })
        })
        .collect()
}

/// Variance ratio of each consolidation, probing the earliest task's test
/// samples.
pub fn transition_variance(
    out: &RunOutcome,
    stream: &TaskStream,
    layer: &str,
    probe_size: usize,
    threshold: f64,
) -> interpcl_core::Result<Vec<VarianceRow>> {
    let probe = stream.tasks[0].test.head(probe_size);
    out.log
        .records
        .iter()
        .filter(|r| r.event == Event::Consolidate)
        .map(|r| {
            let t = r.task;
            let lambda = r.lambdas.values().sum::<f64>() / r.lambdas.len().max(1) as f64;
            let report = variance_ratio(
                &out.carried[t - 1],
                &out.trained[t],
                &out.carried[t],
                layer,
                &probe,
                lambda,
                threshold,
            )?;
            Ok(VarianceRow {
                transition: format!("{}->{}", t - 1, t),
                report,
            })
        })
        .collect()
}

fn run_cell(
    cfg: &ExperimentConfig,
    stream: &TaskStream,
    seed: u64,
    cell: &Cell,
    log_dir: Option<&Path>,
) -> anyhow::Result<(CellResult, CellTiming)> {
    let t0 = Instant::now();
    let out = run_sequence(stream, &cell.method, &cfg.training, seed)?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let d = &cfg.diagnostics;
    let barriers = if d.barrier {
        transition_barriers(&out, stream, d.barrier_grid)?
    } else {
        Vec::new()
    };
    let variance = if d.variance && matches!(cell.method, ClMethod::Consolidate(_)) {
        transition_variance(&out, stream, &d.probe_layer, d.probe_size, d.collapse_threshold)?
    } else {
        Vec::new()
    };
    if let Some(dir) = log_dir {
        write_text(&dir.join(format!("seed{seed}_{}.jsonl", cell.label)), &out.log.to_json_lines())?;
    }
    let accuracy_curve = (0..out.accuracy.len()).map(|i| out.accuracy.seen_mean(i)).collect();
    let lambda_trace = out
        .log
        .records
        .iter()
        .filter(|r| r.event == Event::Consolidate)
        .map(|r| LambdaRow {
            task: r.task,
            shifts: r.shifts.clone(),
            lambdas: r.lambdas.clone(),
        })
        .collect();
    let result = CellResult {
        seed,
        label: cell.label.clone(),
        method: cell.method.clone(),
        metrics: compute_metrics(&out.accuracy),
        accuracy: out.accuracy.rows().to_vec(),
        accuracy_curve,
        barriers,
        variance,
        lambda_trace,
    };
    let timing = CellTiming {
        seed,
        label: cell.label.clone(),
        train_seconds,
        diagnostics_seconds: t1.elapsed().as_secs_f64(),
    };
    Ok((result, timing))
}

/// Runs every cell on a pool of `jobs` threads. Results come back in
/// (seed, cell) order regardless of scheduling.
pub fn execute(cfg: &ExperimentConfig, jobs: usize, log_dir: Option<&Path>) -> anyhow::Result<(ExperimentReport, Meta)> {
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let cells = cfg.cells();
    let mut streams = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        streams.push(build_seed_stream(cfg, seed)?);
    }
    let work: Vec<(usize, &Cell)> = (0..cfg.seeds.len())
        .flat_map(|s| cells.iter().map(move |c| (s, c)))
        .collect();
    let outcomes: Vec<_> = pool.install(|| {
        work.par_iter()
            .map(|&(s, cell)| {
                let seed = cfg.seeds[s];
                log::info!("seed {seed}: running `{}`", cell.label);
                (seed, cell, run_cell(cfg, &streams[s], seed, cell, log_dir))
            })
            .collect()
    });
    let mut report = ExperimentReport {
        schema: REPORT_SCHEMA,
        config_hash: cfg.hash(),
        scenario_hash: cfg.scenario_hash(),
        config: cfg.clone(),
        cells: Vec::new(),
        failures: Vec::new(),
    };
    let mut meta = Meta {
        started_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        jobs,
        ..Meta::default()
    };
    for (seed, cell, outcome) in outcomes {
        match outcome {
            Ok((result, timing)) => {
                report.cells.push(result);
                meta.cells.push(timing);
            }
            Err(e) => {
                log::error!("seed {seed}, `{}` failed: {e:#}", cell.label);
                report.failures.push(CellFailure {
                    seed,
                    label: cell.label.clone(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    meta.total_seconds = started.elapsed().as_secs_f64();
    Ok((report, meta))
}

/// Runs the experiment and writes `report.json`, the CSV tables, per-run
/// logs and the `meta.json` timing sidecar into `out_dir`.
pub fn run_to_dir(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> anyhow::Result<ExperimentReport> {
    std::fs::create_dir_all(out_dir.join("logs"))
        .map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out_dir.display()))?;
    let (report, meta) = execute(cfg, jobs, Some(&out_dir.join("logs")))?;
    write_text(&out_dir.join("report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    write_report_csvs(&report, out_dir)?;
    write_text(&out_dir.join("meta.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    Ok(report)
}

/// Output directory after the environment override.
pub fn resolve_output_dir(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(crate::config::ENV_OUTPUT_DIR).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone())
}
