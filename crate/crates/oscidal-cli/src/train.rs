//! The `train` subcommand: run every (sweep point, seed) job over a shared
//! discretization, write each run's artifacts, and pick the winning sweep
//! point by mean selected-grade validation loss across seeds.
//!
//! Jobs are independent given the assembled collocation system, so they run
//! on a small worker pool; everything written (manifest order, winner ties,
//! summary rows) is ordered by the job grid, never by scheduling, so
//! repeated invocations produce identical bytes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, Context};
use oscidal::io::{atomic_write, cache_dir, fmt_f64};
use oscidal::mgdl::{run_amgdl, run_sgdl, SolveContext};
use oscidal::operator::DiscreteOperator;

use crate::artifacts::{self, ManifestRow, RunReport};
use crate::config::{ExperimentConfig, SweepPoint};
use crate::{CmdResult, Failure};

/// Convert a library result into a classified command failure.
fn lib<T>(r: oscidal::Result<T>) -> CmdResult<T> {
    r.map_err(|e| Failure::classified(anyhow::Error::new(e)))
}

/// What one job produced: a written report, or the error that stopped it.
struct JobOutcome {
    point_idx: usize,
    seed: u64,
    run_dir: PathBuf,
    report: Option<RunReport>,
    error: Option<anyhow::Error>,
}

impl JobOutcome {
    /// A job counts only if it produced a solution: no error, no aborted
    /// grade, at least one selected grade.
    fn ok(&self) -> bool {
        self.error.is_none()
            && self.report.as_ref().is_some_and(|r| {
                r.selected >= 1 && !r.stop.starts_with("grade-failed")
            })
    }
}

pub fn cmd_train(
    config_path: &Path,
    sgdl: bool,
    output: Option<PathBuf>,
    seed_override: Option<u64>,
    parallel: Option<usize>,
) -> CmdResult<()> {
    let mut cfg = ExperimentConfig::from_path(config_path).map_err(Failure::usage)?;
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }

    let problem = cfg.problem().map_err(Failure::usage)?;
    let op = lib(DiscreteOperator::new(problem, cfg.quadrature()))?;
    let n = op.collocation_nodes().len();
    let cache = cache_dir();
    let ctx = lib(SolveContext::build(
        op,
        cfg.validation.points,
        cfg.validation.seed,
        cfg.validation.rhs_oversample,
        Some(&cache),
    ))?;

    let toml_text = cfg.to_toml_string().map_err(Failure::internal)?;
    atomic_write(&cfg.output_dir.join("config.toml"), toml_text.as_bytes())
        .map_err(|e| Failure::internal(anyhow::Error::new(e).context("writing config copy")))?;

    let points = cfg.sweep_points();
    let jobs: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, _)| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let workers = parallel
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
        .min(jobs.len())
        .max(1);

    println!(
        "training {} job(s) ({} sweep point(s) x {} seed(s)) on {} worker(s), system size {}",
        jobs.len(),
        points.len(),
        cfg.seeds.len(),
        workers,
        n,
    );

    let outcomes = run_pool(&ctx, &cfg, &points, &jobs, sgdl, workers);

    // Manifest rows in job-grid order.
    let manifest: Vec<ManifestRow> = outcomes
        .iter()
        .map(|o| ManifestRow {
            sweep_label: points[o.point_idx].label.clone(),
            seed: o.seed,
            status: if o.ok() { "ok" } else { "failed" },
            val_loss: o.report.as_ref().and_then(|r| r.selected_val_loss()),
            run_dir: o.run_dir.clone(),
        })
        .collect();
    artifacts::write_manifest(&cfg.output_dir, &manifest).map_err(Failure::internal)?;

    for o in &outcomes {
        match (&o.error, &o.report) {
            (Some(e), _) => println!(
                "  {} seed {}: FAILED ({e:#})",
                points[o.point_idx].label, o.seed
            ),
            (None, Some(r)) => {
                let err = r
                    .selected_val_loss()
                    .map(fmt_f64)
                    .unwrap_or_else(|| "-".into());
                println!(
                    "  {} seed {}: {} grade(s), stop {}, val loss {}",
                    points[o.point_idx].label, o.seed, r.selected, r.stop, err
                );
            }
            (None, None) => unreachable!("jobs always carry a report or an error"),
        }
    }

    // A sweep point is eligible only when every seed produced a solution.
    let mut winner: Option<(usize, f64)> = None;
    for (i, point) in points.iter().enumerate() {
        let of_point: Vec<&JobOutcome> =
            outcomes.iter().filter(|o| o.point_idx == i).collect();
        if !of_point.iter().all(|o| o.ok()) {
            continue;
        }
        let mean = of_point
            .iter()
            .filter_map(|o| o.report.as_ref().and_then(|r| r.selected_val_loss()))
            .sum::<f64>()
            / of_point.len() as f64;
        // Strict inequality keeps the earliest grid point on ties.
        if winner.map_or(true, |(_, best)| mean < best) {
            winner = Some((i, mean));
        }
        println!("sweep point {}: mean val loss {}", point.label, fmt_f64(mean));
    }

    let Some((win_idx, win_mean)) = winner else {
        // Prefer the first hard error's classification; otherwise the sweep
        // failed numerically (aborted grades everywhere).
        let first_err = outcomes.into_iter().find_map(|o| o.error);
        return Err(match first_err {
            Some(e) => Failure::classified(e.context("no sweep point completed on all seeds")),
            None => Failure::numeric(anyhow!(
                "no sweep point completed on all seeds (all runs aborted mid-grade)"
            )),
        });
    };

    let reports: Vec<&RunReport> = outcomes
        .iter()
        .filter(|o| o.point_idx == win_idx)
        .filter_map(|o| o.report.as_ref())
        .collect();
    artifacts::write_summary(&cfg.output_dir, &points[win_idx].label, &reports)
        .map_err(Failure::internal)?;

    println!(
        "winner: {} (mean val loss {})",
        points[win_idx].label,
        fmt_f64(win_mean)
    );
    for r in &reports {
        if let Some(rel) = r
            .selected
            .checked_sub(1)
            .and_then(|i| r.grades.get(i))
            .and_then(|g| g.relative_error)
        {
            println!("  seed {}: relative error {}", r.seed, fmt_f64(rel));
        }
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}

/// Run the jobs on `workers` scoped threads. Results come back indexed by
/// job, so output order is independent of scheduling.
fn run_pool(
    ctx: &SolveContext,
    cfg: &ExperimentConfig,
    points: &[SweepPoint],
    jobs: &[(usize, u64)],
    sgdl: bool,
    workers: usize,
) -> Vec<JobOutcome> {
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<JobOutcome>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let j = cursor.fetch_add(1, Ordering::Relaxed);
                if j >= jobs.len() {
                    break;
                }
                let (point_idx, seed) = jobs[j];
                let outcome = run_job(ctx, cfg, &points[point_idx], point_idx, seed, sgdl);
                slots.lock().expect("no poisoned job slots")[j] = Some(outcome);
            });
        }
    });

    slots
        .into_inner()
        .expect("no poisoned job slots")
        .into_iter()
        .map(|s| s.expect("every job index filled"))
        .collect()
}

fn run_job(
    ctx: &SolveContext,
    cfg: &ExperimentConfig,
    point: &SweepPoint,
    point_idx: usize,
    seed: u64,
    sgdl: bool,
) -> JobOutcome {
    let run_dir = cfg
        .output_dir
        .join("runs")
        .join(&point.label)
        .join(format!("seed{seed}"));
    let mut outcome = JobOutcome {
        point_idx,
        seed,
        run_dir: run_dir.clone(),
        report: None,
        error: None,
    };

    let run = if sgdl {
        run_sgdl(
            ctx,
            &cfg.sgdl_hidden(),
            &cfg.train_config(point, seed),
            cfg.amgdl.omega0,
        )
    } else {
        run_amgdl(ctx, &cfg.amgdl_config(point, seed))
    };
    let run = match run {
        Ok(run) => run,
        Err(e) => {
            outcome.error = Some(anyhow::Error::new(e).context("training failed"));
            return outcome;
        }
    };

    let resolved = cfg.single_run(point, seed, run_dir.clone());
    match artifacts::write_run_dir(&run_dir, &resolved, &run, &point.label)
        .with_context(|| format!("writing artifacts to {}", run_dir.display()))
    {
        Ok(report) => outcome.report = Some(report),
        Err(e) => outcome.error = Some(e),
    }
    outcome
}
