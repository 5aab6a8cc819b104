//! On-disk layout of training output. Each (sweep point, seed) job gets a
//! run directory
//!
//! ```text
//!     <output_dir>/runs/<sweep_label>/seed<seed>/
//!         config.toml      resolved single-run configuration
//!         run.json         machine-readable result record
//!         grades.csv       per-grade losses, residuals, errors
//!         arch.txt         network shapes, grade by grade
//!         grade_<g>.json   parameter checkpoint of grade g
//! ```
//!
//! and the experiment root gets `config.toml` (the original), `manifest.csv`
//! (one row per job) and `summary.csv` (per-grade rows of the winning sweep
//! point). All files are written atomically; reruns overwrite cleanly.
//! Summary tables carry no timings, so byte-identical reruns stay
//! byte-identical.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use oscidal::io::{atomic_write, fmt_f64, write_csv, write_tagged_complex};
use oscidal::linalg::C64;
use oscidal::mgdl::TrainingRun;
use oscidal::net::save_checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Machine-readable record of one finished run (run.json).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    /// Driver: "amgdl" or "sgdl".
    pub mode: String,
    pub seed: u64,
    pub sweep_label: String,
    /// Why training stopped, as a display string.
    pub stop: String,
    /// Number of grades forming the returned solution.
    pub selected: usize,
    /// Human-readable network shape per grade ("_F" marks frozen layers).
    pub shapes: Vec<String>,
    pub grades: Vec<GradeReport>,
}

/// Per-grade scalar results inside [`RunReport`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradeReport {
    pub grade: usize,
    /// The grade's own hidden widths (its frozen inputs are not repeated).
    pub widths: Vec<usize>,
    pub omega0: f64,
    pub init_seed: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub residual_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn from_run(run: &TrainingRun, sweep_label: &str) -> Self {
        RunReport {
            mode: run.mode.as_str().to_string(),
            seed: run.seed,
            sweep_label: sweep_label.to_string(),
            stop: run.stop.to_string(),
            selected: run.selected,
            shapes: shape_lines(run),
            grades: run
                .records
                .iter()
                .map(|rec| GradeReport {
                    grade: rec.grade,
                    widths: rec.params.arch().hidden.clone(),
                    omega0: rec.omega0,
                    init_seed: rec.init_seed,
                    train_loss: rec.train_loss,
                    val_loss: rec.val_loss,
                    residual_norm: rec.residual_norm,
                    relative_error: rec.relative_error,
                    wall_seconds: rec.wall_seconds,
                })
                .collect(),
        }
    }

    /// Validation loss of the selected solution's final grade.
    pub fn selected_val_loss(&self) -> Option<f64> {
        self.selected
            .checked_sub(1)
            .and_then(|i| self.grades.get(i))
            .map(|g| g.val_loss)
    }
}

/// One shape line per grade. In the adaptive run, grade g consumes the
/// frozen hidden stack of grades 1..g (marked `_F`) and appends its own
/// layers; the baseline run is a single deep network.
fn shape_lines(run: &TrainingRun) -> Vec<String> {
    match run.mode {
        oscidal::mgdl::RunMode::Sgdl => run
            .records
            .iter()
            .map(|rec| {
                let mut line = String::from("network: [1]");
                for w in &rec.params.arch().hidden {
                    line.push_str(&format!(" -> [{w}]"));
                }
                line.push_str(" -> [2]");
                line
            })
            .collect(),
        oscidal::mgdl::RunMode::Amgdl => (0..run.records.len())
            .map(|g| {
                let mut line = format!("grade {}: [1]", run.records[g].grade);
                for rec in &run.records[..g] {
                    for w in &rec.params.arch().hidden {
                        line.push_str(&format!(" -> [{w}]_F"));
                    }
                }
                for w in &run.records[g].params.arch().hidden {
                    line.push_str(&format!(" -> [{w}]"));
                }
                line.push_str(" -> [2]");
                line
            })
            .collect(),
    }
}

fn widths_cell(widths: &[usize]) -> String {
    widths
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

fn opt_cell(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Write every artifact of one finished run into `run_dir`.
pub fn write_run_dir(
    run_dir: &Path,
    resolved: &ExperimentConfig,
    run: &TrainingRun,
    sweep_label: &str,
) -> Result<RunReport> {
    let report = RunReport::from_run(run, sweep_label);

    let toml_text = resolved.to_toml_string()?;
    atomic_write(&run_dir.join("config.toml"), toml_text.as_bytes())
        .context("writing run config.toml")?;

    let json = serde_json::to_vec_pretty(&report).context("encoding run.json")?;
    atomic_write(&run_dir.join("run.json"), &json).context("writing run.json")?;

    let rows: Vec<Vec<String>> = report
        .grades
        .iter()
        .map(|g| {
            vec![
                g.grade.to_string(),
                widths_cell(&g.widths),
                fmt_f64(g.train_loss),
                fmt_f64(g.val_loss),
                fmt_f64(g.residual_norm),
                opt_cell(g.relative_error),
                fmt_f64(g.wall_seconds),
            ]
        })
        .collect();
    write_csv(&run_dir.join("grades.csv"), GRADES_HEADER, &rows)
        .context("writing grades.csv")?;

    let arch = report.shapes.join("\n") + "\n";
    atomic_write(&run_dir.join("arch.txt"), arch.as_bytes()).context("writing arch.txt")?;

    for rec in &run.records {
        save_checkpoint(
            &rec.params,
            rec.omega0,
            rec.init_seed,
            &run_dir.join(format!("grade_{}.json", rec.grade)),
        )
        .with_context(|| format!("writing grade {} checkpoint", rec.grade))?;
    }

    Ok(report)
}

const GRADES_HEADER: &[&str] = &[
    "grade",
    "widths",
    "train_loss",
    "val_loss",
    "residual_norm",
    "relative_error",
    "seconds",
];

/// Read a run directory's run.json.
pub fn read_run_report(run_dir: &Path) -> Result<RunReport> {
    let path = run_dir.join("run.json");
    let bytes =
        std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// One row of manifest.csv: the status of one (sweep point, seed) job.
pub struct ManifestRow {
    pub sweep_label: String,
    pub seed: u64,
    /// "ok" or "failed"; failed jobs never participate in winner selection.
    pub status: &'static str,
    /// Selected-grade validation loss (empty for failed jobs).
    pub val_loss: Option<f64>,
    pub run_dir: PathBuf,
}

pub fn write_manifest(output_dir: &Path, rows: &[ManifestRow]) -> Result<()> {
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.sweep_label.clone(),
                r.seed.to_string(),
                r.status.to_string(),
                opt_cell(r.val_loss),
                r.run_dir.display().to_string(),
            ]
        })
        .collect();
    write_csv(
        &output_dir.join("manifest.csv"),
        &["sweep_point", "seed", "status", "val_loss", "run_dir"],
        &table,
    )
    .context("writing manifest.csv")
}

/// Per-grade rows of the winning sweep point, one block per seed. No wall
/// clock: reruns with identical inputs produce identical bytes.
pub fn write_summary(output_dir: &Path, winner: &str, reports: &[&RunReport]) -> Result<()> {
    let mut rows = Vec::new();
    for report in reports {
        for g in &report.grades {
            rows.push(vec![
                winner.to_string(),
                report.seed.to_string(),
                g.grade.to_string(),
                fmt_f64(g.train_loss),
                fmt_f64(g.val_loss),
                fmt_f64(g.residual_norm),
                opt_cell(g.relative_error),
            ]);
        }
    }
    write_csv(
        &output_dir.join("summary.csv"),
        &[
            "sweep_point",
            "seed",
            "grade",
            "train_loss",
            "val_loss",
            "residual_norm",
            "relative_error",
        ],
        &rows,
    )
    .context("writing summary.csv")
}

const DUMP_MAGIC: &[u8; 4] = b"OSCM";
const DUMP_VERSION: u32 = 1;
const DUMP_TAG: &[u8; 32] = b"collocation-matrix-rows-v1\0\0\0\0\0\0";

/// Write an n x n collocation matrix as a tagged binary file: magic "OSCM",
/// version, a fixed content tag, then the entries row-major with a trailing
/// checksum.
pub fn write_matrix_dump(path: &Path, n: usize, row_major: &[C64]) -> Result<()> {
    assert_eq!(row_major.len(), n * n, "row-major length must be n^2");
    write_tagged_complex(path, DUMP_MAGIC, DUMP_VERSION, DUMP_TAG, row_major)
        .context("writing matrix dump")
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::bail;
    use oscidal::io::read_tagged_complex;

    /// Inverse of [`write_matrix_dump`]: (n, row-major entries), failing on
    /// wrong magic, version, tag, checksum, or a non-square entry count.
    fn read_matrix_dump(path: &Path) -> Result<(usize, Vec<C64>)> {
        let Some(values) = read_tagged_complex(path, DUMP_MAGIC, DUMP_VERSION, DUMP_TAG) else {
            bail!("{}: not a valid matrix dump", path.display());
        };
        let n = (values.len() as f64).sqrt().round() as usize;
        if n * n != values.len() {
            bail!(
                "{}: {} entries do not form a square matrix",
                path.display(),
                values.len()
            );
        }
        Ok((n, values))
    }

    #[test]
    fn matrix_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.oscm");
        let entries: Vec<C64> = (0..9)
            .map(|k| C64::new(k as f64, -(k as f64) / 3.0))
            .collect();
        write_matrix_dump(&path, 3, &entries).unwrap();
        let (n, back) = read_matrix_dump(&path).unwrap();
        assert_eq!(n, 3);
        assert_eq!(back, entries);
    }

    #[test]
    fn matrix_dump_rejects_tampering_and_non_square() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.oscm");
        let entries: Vec<C64> = (0..4).map(|k| C64::new(k as f64, 0.0)).collect();
        write_matrix_dump(&path, 2, &entries).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_matrix_dump(&path).is_err());

        // Six entries pass the checksum but are not square.
        let six: Vec<C64> = (0..6).map(|k| C64::new(k as f64, 0.0)).collect();
        write_tagged_complex(&path, DUMP_MAGIC, DUMP_VERSION, DUMP_TAG, &six).unwrap();
        assert!(read_matrix_dump(&path).is_err());
    }

    #[test]
    fn widths_cell_joins_with_x() {
        assert_eq!(widths_cell(&[64]), "64");
        assert_eq!(widths_cell(&[64, 32]), "64x32");
    }

    #[test]
    fn optional_errors_print_as_empty_cells() {
        assert_eq!(opt_cell(None), "");
        assert_eq!(opt_cell(Some(0.5)), "0.5");
    }
}
