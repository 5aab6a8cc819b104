//! The non-training subcommands: `reference-solve` (direct LU solution of
//! the collocation system with error diagnostics), `verify` (recompute
//! residual norms from a run's checkpoints and check the two-sided error
//! bounds), `spectrum` (per-frequency relative error of a run's solution),
//! and `dump-matrix` (tagged binary export of the assembled matrix).

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use oscidal::io::{atomic_write, cache_dir, fmt_f64, write_csv};
use oscidal::linalg::C64;
use oscidal::metrics::{
    inverse_norm_estimate, relative_l2_error, seminorm, spectrum_relative_error, verify_bounds,
};
use oscidal::mgdl::{
    replay_solution, GradeRecord, RunMode, StopReason, TrainingRun, ERROR_GRID_SUBINTERVALS,
};
use oscidal::net::load_checkpoint;
use oscidal::operator::{
    assemble_matrix, estimate_quadrature_error, reference_solve, uniform_grid, DiscreteOperator,
    OperatorMatrix,
};
use oscidal::problem::{compute_rhs_with_cache, eval_exact, ProblemSpec};
use serde::Serialize;

use crate::artifacts::{self, write_matrix_dump};
use crate::config::ExperimentConfig;
use crate::{CmdResult, Failure};

/// Convert a library result into a classified command failure.
fn lib<T>(r: oscidal::Result<T>) -> CmdResult<T> {
    r.map_err(|e| Failure::classified(anyhow::Error::new(e)))
}

fn load_config(path: &Path) -> CmdResult<ExperimentConfig> {
    ExperimentConfig::from_path(path).map_err(Failure::usage)
}

fn build_operator(cfg: &ExperimentConfig) -> CmdResult<(ProblemSpec, DiscreteOperator)> {
    let problem = cfg.problem().map_err(Failure::usage)?;
    let op = lib(DiscreteOperator::new(problem.clone(), cfg.quadrature()))?;
    Ok((problem, op))
}

/// Summary record written next to the reference solution.
#[derive(Serialize)]
struct ReferenceReport {
    /// Collocation system size N = pq + 1.
    n: usize,
    /// Quadrature subintervals p.
    p: usize,
    /// Collocation refinement q.
    q: usize,
    kappa: f64,
    /// Relative L2 error of the direct solve against the exact solution.
    relative_error: f64,
    /// Refined-rule quadrature error surrogate R_hat.
    quadrature_error_estimate: f64,
    /// Estimated ||M^-1||_2.
    norm_m_inv: f64,
    /// A priori ceiling on the direct solve's relative error:
    /// norm_m_inv * 2 * R_hat / ||y||_N.
    relative_error_ceiling: f64,
}

pub fn cmd_reference_solve(config_path: &Path, output: Option<PathBuf>) -> CmdResult<()> {
    let cfg = load_config(config_path)?;
    let out_dir = output.unwrap_or_else(|| cfg.output_dir.clone());
    let (problem, op) = build_operator(&cfg)?;
    if !problem.exact.is_some() {
        return Err(Failure::classified(
            anyhow::Error::new(oscidal::Error::NoExactSolution)
                .context("reference-solve needs a manufactured solution to build f and report errors"),
        ));
    }

    let matrix = assemble_matrix(&op);
    let nodes = op.collocation_nodes();
    let rhs = lib(compute_rhs_with_cache(
        &problem,
        op.collocation_grid_id(),
        nodes.clone(),
        cfg.validation.rhs_oversample,
        Some(&cache_dir()),
    ))?;
    let solution = lib(reference_solve(&matrix, &rhs.values))?;
    let exact = lib(eval_exact(&problem, op.collocation_grid_id(), nodes.clone()))?;
    let relative_error = lib(relative_l2_error(&exact.values, &solution))?;
    let r_hat = lib(estimate_quadrature_error(&op, 2))?;
    let norm_m_inv = lib(inverse_norm_estimate(&matrix))?.value;
    let exact_norm = seminorm(&exact.values);

    let report = ReferenceReport {
        n: matrix.n(),
        p: op.p(),
        q: cfg.quadrature.q,
        kappa: problem.kappa,
        relative_error,
        quadrature_error_estimate: r_hat,
        norm_m_inv,
        relative_error_ceiling: norm_m_inv * 2.0 * r_hat / exact_norm,
    };

    let rows: Vec<Vec<String>> = nodes
        .iter()
        .zip(&solution)
        .zip(&exact.values)
        .map(|((s, y), e)| {
            vec![
                fmt_f64(*s),
                fmt_f64(y.re),
                fmt_f64(y.im),
                fmt_f64(e.re),
                fmt_f64(e.im),
            ]
        })
        .collect();
    lib(write_csv(
        &out_dir.join("solution.csv"),
        &["s", "re", "im", "exact_re", "exact_im"],
        &rows,
    ))?;
    let json = serde_json::to_vec_pretty(&report)
        .context("encoding report.json")
        .map_err(Failure::internal)?;
    lib(atomic_write(&out_dir.join("report.json"), &json))?;

    println!(
        "direct solve: N = {}, p = {}, q = {}, kappa = {}",
        report.n, report.p, report.q, report.kappa
    );
    println!(
        "relative error {} (ceiling {}), quadrature surrogate {}",
        fmt_f64(report.relative_error),
        fmt_f64(report.relative_error_ceiling),
        fmt_f64(report.quadrature_error_estimate),
    );
    println!("solution and report in {}", out_dir.display());
    Ok(())
}

/// Load the contiguous checkpoint chain grade_1.json, grade_2.json, ... of
/// a run directory.
fn load_grade_params(run_dir: &Path) -> CmdResult<Vec<(oscidal::net::NetParams, f64, u64)>> {
    let mut out = Vec::new();
    for g in 1.. {
        let path = run_dir.join(format!("grade_{g}.json"));
        if !path.exists() {
            break;
        }
        out.push(lib(load_checkpoint(&path))?);
    }
    if out.is_empty() {
        return Err(Failure::usage(anyhow!(
            "no grade checkpoints (grade_<n>.json) in {}",
            run_dir.display()
        )));
    }
    Ok(out)
}

/// Rebuild per-grade records from checkpoints alone; residual norms are
/// recomputed from the replayed solutions, never read from run.json.
fn records_from_checkpoints(
    run_dir: &Path,
    matrix: &OperatorMatrix,
    rhs: &[C64],
    nodes: &[f64],
) -> CmdResult<Vec<GradeRecord>> {
    let loaded = load_grade_params(run_dir)?;
    let grades = loaded.len();
    let mut records: Vec<GradeRecord> = loaded
        .into_iter()
        .enumerate()
        .map(|(i, (params, omega0, init_seed))| GradeRecord {
            grade: i + 1,
            params,
            omega0,
            init_seed,
            frozen: i + 1 < grades,
            train_loss: 0.0,
            val_loss: 0.0,
            residual_norm: 0.0,
            wall_seconds: 0.0,
            relative_error: None,
            epoch_train_loss: Vec::new(),
            epoch_val_loss: Vec::new(),
        })
        .collect();

    let per_grade = replay_solution(&records, nodes);
    for (rec, accum) in records.iter_mut().zip(per_grade) {
        let applied = matrix.entries().matvec(&accum);
        let residual: Vec<C64> = rhs.iter().zip(&applied).map(|(f, m)| f - m).collect();
        rec.residual_norm = seminorm(&residual);
        rec.train_loss = rec.residual_norm * rec.residual_norm;
    }
    Ok(records)
}

/// Relative slack allowed on the residual monotonicity check; covers
/// accumulation-order roundoff between training and replay.
const MONOTONE_SLACK: f64 = 1e-12;

pub fn cmd_verify(run_dir: &Path, output: Option<PathBuf>) -> CmdResult<()> {
    let cfg = load_config(&run_dir.join("config.toml"))?;
    let (problem, op) = build_operator(&cfg)?;
    if !problem.exact.is_some() {
        return Err(Failure::classified(
            anyhow::Error::new(oscidal::Error::NoExactSolution)
                .context("verify needs the manufactured solution to measure true errors"),
        ));
    }
    let matrix = assemble_matrix(&op);
    let nodes = op.collocation_nodes();
    let rhs = lib(compute_rhs_with_cache(
        &problem,
        op.collocation_grid_id(),
        nodes.clone(),
        cfg.validation.rhs_oversample,
        Some(&cache_dir()),
    ))?;

    let records = records_from_checkpoints(run_dir, &matrix, &rhs.values, &nodes)?;
    let selected = records.len();
    let run = TrainingRun {
        mode: RunMode::Amgdl,
        seed: 0,
        records,
        stop: StopReason::MaxGrades,
        selected,
    };
    let reports = lib(verify_bounds(&run, &op, &matrix))?;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.grade.to_string(),
                fmt_f64(r.residual_norm),
                fmt_f64(r.r_hat),
                fmt_f64(r.norm_m),
                fmt_f64(r.norm_m_inv),
                fmt_f64(r.lower),
                fmt_f64(r.upper),
                fmt_f64(r.measured_error),
                r.lower_ok.to_string(),
                r.upper_ok.to_string(),
            ]
        })
        .collect();
    let csv_path = output.unwrap_or_else(|| run_dir.join("bounds.csv"));
    lib(write_csv(
        &csv_path,
        &[
            "grade",
            "residual_norm",
            "r_hat",
            "norm_m",
            "norm_m_inv",
            "lower",
            "upper",
            "measured_error",
            "lower_ok",
            "upper_ok",
        ],
        &rows,
    ))?;

    for r in &reports {
        println!(
            "grade {}: residual {}, error {} in [{}, {}]{}",
            r.grade,
            fmt_f64(r.residual_norm),
            fmt_f64(r.measured_error),
            fmt_f64(r.lower),
            fmt_f64(r.upper),
            if r.upper_ok { "" } else { "  UPPER VIOLATED" },
        );
    }
    println!("bound report written to {}", csv_path.display());

    let mut violations = Vec::new();
    for pair in reports.windows(2) {
        if pair[1].residual_norm > pair[0].residual_norm * (1.0 + MONOTONE_SLACK) {
            violations.push(format!(
                "residual rose from grade {} ({}) to grade {} ({})",
                pair[0].grade,
                fmt_f64(pair[0].residual_norm),
                pair[1].grade,
                fmt_f64(pair[1].residual_norm)
            ));
        }
    }
    for r in &reports {
        if !r.upper_ok {
            violations.push(format!(
                "grade {}: measured error {} exceeds upper bound {}",
                r.grade,
                fmt_f64(r.measured_error),
                fmt_f64(r.upper)
            ));
        }
    }
    if violations.is_empty() {
        println!("all grades within bounds, residuals monotone");
        Ok(())
    } else {
        Err(Failure::numeric(anyhow!(violations.join("; "))))
    }
}

pub fn cmd_spectrum(run_dir: &Path, output: Option<PathBuf>) -> CmdResult<()> {
    let cfg = load_config(&run_dir.join("config.toml"))?;
    let problem = cfg.problem().map_err(Failure::usage)?;
    if !problem.exact.is_some() {
        return Err(Failure::classified(
            anyhow::Error::new(oscidal::Error::NoExactSolution)
                .context("spectrum compares against the manufactured solution"),
        ));
    }

    let loaded = load_grade_params(run_dir)?;
    let grades = loaded.len();
    // The selected grade count comes from run.json when present; checkpoints
    // past it are replay inputs only.
    let selected = artifacts::read_run_report(run_dir)
        .ok()
        .map(|r| r.selected.clamp(1, grades))
        .unwrap_or(grades);
    let records: Vec<GradeRecord> = loaded
        .into_iter()
        .take(selected)
        .enumerate()
        .map(|(i, (params, omega0, init_seed))| GradeRecord {
            grade: i + 1,
            params,
            omega0,
            init_seed,
            frozen: i + 1 < selected,
            train_loss: 0.0,
            val_loss: 0.0,
            residual_norm: 0.0,
            wall_seconds: 0.0,
            relative_error: None,
            epoch_train_loss: Vec::new(),
            epoch_val_loss: Vec::new(),
        })
        .collect();

    let nodes = uniform_grid(ERROR_GRID_SUBINTERVALS);
    let approx = replay_solution(&records, &nodes)
        .pop()
        .expect("at least one grade checkpoint");
    let exact = lib(eval_exact(
        &problem,
        format!("uniform:l={ERROR_GRID_SUBINTERVALS}"),
        nodes,
    ))?;
    let report = lib(spectrum_relative_error(&exact.values, &approx))?;

    let rows: Vec<Vec<String>> = report
        .bins
        .iter()
        .map(|b| {
            vec![
                fmt_f64(b.freq),
                fmt_f64(b.relative_error),
                b.defined.to_string(),
            ]
        })
        .collect();
    let csv_path = output.unwrap_or_else(|| run_dir.join("spectrum.csv"));
    lib(write_csv(&csv_path, &["freq", "rel_err", "defined"], &rows))?;

    println!(
        "spectrum of the {selected}-grade solution over {} bins written to {}",
        report.bins.len(),
        csv_path.display()
    );
    match report.peak() {
        Some(peak) => println!(
            "worst defined bin: relative error {} at angular frequency {}",
            fmt_f64(peak.relative_error),
            fmt_f64(peak.freq)
        ),
        None => println!("no defined bins (exact spectrum is flat zero)"),
    }
    Ok(())
}

pub fn cmd_dump_matrix(config_path: &Path, output: &Path) -> CmdResult<()> {
    let cfg = load_config(config_path)?;
    let (_, op) = build_operator(&cfg)?;
    let matrix = assemble_matrix(&op);
    write_matrix_dump(output, matrix.n(), matrix.entries().data())
        .map_err(Failure::internal)?;
    println!(
        "wrote {0} x {0} collocation matrix to {1}",
        matrix.n(),
        output.display()
    );
    Ok(())
}
