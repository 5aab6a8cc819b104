//! End-to-end checks of the batch binary: train a miniature problem, then
//! run every other subcommand against the produced artifacts, and confirm
//! the documented exit-code contract on the failure paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;

/// A miniature experiment that trains in about a second: wavenumber 1,
/// constant kernel, one smooth band, 11-point system, two tiny grades.
fn tiny_config(output_dir: &Path) -> String {
    format!(
        r#"
seeds = [1, 2]
output_dir = "{}"

[problem]
kappa = 1.0
kernel = {{ type = "constant", value = 0.45 }}

[problem.exact]
type = "bands"
bands = [{{ coeff = "exp", freq = 0.0 }}]

[quadrature]
cap_gamma = 2.0
beta = 1.0
gamma = 10.0
q = 1

[architecture]
preset = "equal-width"
width = 8

[train]
epochs = 30
batch_size = 16
lr_initial = 1e-2

[amgdl]
max_grades = 2
min_grades = 2
stopping = "train-plateau"
omega0 = 1.0

[validation]
points = 64
seed = 9
rhs_oversample = 2
"#,
        output_dir.display()
    )
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_oscidal-cli"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("binary spawns").status.code().expect("no signal")
}

/// Write the tiny config into `dir` and train it, returning (config path,
/// output dir, one run dir).
fn train_tiny(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let out_dir = dir.join("out");
    let cfg_path = dir.join("exp.toml");
    std::fs::write(&cfg_path, tiny_config(&out_dir)).unwrap();
    run_ok(bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .env("OSCIDAL_CACHE_DIR", dir.join("cache")));
    (cfg_path, out_dir.clone(), out_dir.join("runs/base/seed1"))
}

#[test]
fn train_writes_the_documented_artifact_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, out_dir, run_dir) = train_tiny(tmp.path());

    for f in ["config.toml", "manifest.csv", "summary.csv"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    for f in [
        "config.toml",
        "run.json",
        "grades.csv",
        "arch.txt",
        "grade_1.json",
        "grade_2.json",
    ] {
        assert!(run_dir.join(f).exists(), "missing run file {f}");
    }
    // Both seeds of the single sweep point appear in the manifest as ok.
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_point,seed,status,val_loss,run_dir"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("base,1,ok,"));
    assert!(rows[1].starts_with("base,2,ok,"));

    // The summary carries one row per trained grade per seed.
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_point,seed,grade,train_loss,val_loss,residual_norm,relative_error"
    );
    assert_eq!(lines.count(), 4);

    // The architecture manifest prints the frozen-layer pipeline.
    let arch = std::fs::read_to_string(run_dir.join("arch.txt")).unwrap();
    assert_eq!(
        arch,
        "grade 1: [1] -> [8] -> [2]\ngrade 2: [1] -> [8]_F -> [8] -> [2]\n"
    );

    // The per-run config is standalone: one seed, no sweep.
    let run_cfg = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(run_cfg.contains("seeds = [1]"));
}

#[test]
fn verify_and_spectrum_run_on_a_fresh_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, _, run_dir) = train_tiny(tmp.path());

    let out = run_ok(bin()
        .arg("verify")
        .arg(&run_dir)
        .env("OSCIDAL_CACHE_DIR", tmp.path().join("cache")));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("residuals monotone"), "stdout: {stdout}");
    let bounds = std::fs::read_to_string(run_dir.join("bounds.csv")).unwrap();
    let mut lines = bounds.lines();
    assert_eq!(
        lines.next().unwrap(),
        "grade,residual_norm,r_hat,norm_m,norm_m_inv,lower,upper,measured_error,lower_ok,upper_ok"
    );
    assert_eq!(lines.count(), 2);

    run_ok(bin().arg("spectrum").arg(&run_dir));
    let spectrum = std::fs::read_to_string(run_dir.join("spectrum.csv")).unwrap();
    let mut lines = spectrum.lines();
    assert_eq!(lines.next().unwrap(), "freq,rel_err,defined");
    // 20001 samples -> 20000 transform points -> 20000 bins.
    assert_eq!(lines.count(), 20000);
}

#[test]
fn usage_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();

    // Missing config file.
    assert_eq!(
        exit_code(bin().args(["train", "--config"]).arg(tmp.path().join("absent.toml"))),
        2
    );

    // Malformed TOML.
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seeds = [1\n").unwrap();
    assert_eq!(exit_code(bin().args(["train", "--config"]).arg(&bad)), 2);

    // Valid TOML, invalid experiment (duplicate seeds).
    let dup = tmp.path().join("dup.toml");
    std::fs::write(&dup, tiny_config(&tmp.path().join("out")).replace("[1, 2]", "[1, 1]")).unwrap();
    assert_eq!(exit_code(bin().args(["train", "--config"]).arg(&dup)), 2);

    // Verify on a directory with no config.
    assert_eq!(exit_code(bin().arg("verify").arg(tmp.path())), 2);

    // Unknown flags are rejected by the parser with the same code.
    assert_eq!(exit_code(bin().args(["train", "--no-such-flag"])), 2);
}

#[test]
fn corrupt_checkpoints_are_usage_errors_and_doctored_ones_numeric() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, _, run_dir) = train_tiny(tmp.path());
    let cache = tmp.path().join("cache");

    // Truncating a checkpoint makes verify fail the checkpoint parse.
    let ckpt = run_dir.join("grade_2.json");
    let original = std::fs::read(&ckpt).unwrap();
    std::fs::write(&ckpt, &original[..original.len() / 2]).unwrap();
    let out = bin()
        .arg("verify")
        .arg(&run_dir)
        .env("OSCIDAL_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("corrupt checkpoint"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Amplifying grade 2's head weights a millionfold keeps the checkpoint
    // structurally valid but makes the replayed grade-2 residual explode,
    // so verify flags the broken residual monotonicity.
    let mut doctored: serde_json::Value = serde_json::from_slice(&original).unwrap();
    let head = doctored["layers"]
        .as_array_mut()
        .unwrap()
        .last_mut()
        .unwrap();
    for w in head["weights"].as_array_mut().unwrap() {
        *w = serde_json::json!(w.as_f64().unwrap() * 1e6 + 1.0);
    }
    std::fs::write(&ckpt, serde_json::to_vec(&doctored).unwrap()).unwrap();
    let out = bin()
        .arg("verify")
        .arg(&run_dir)
        .env("OSCIDAL_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("residual rose"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn diverging_training_exits_numeric() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg_path = tmp.path().join("exp.toml");
    // An absurd learning rate overflows the head weights within an epoch;
    // every seed aborts mid-grade, so no sweep point completes.
    std::fs::write(
        &cfg_path,
        tiny_config(&out_dir).replace("lr_initial = 1e-2", "lr_initial = 1e300"),
    )
    .unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .env("OSCIDAL_CACHE_DIR", tmp.path().join("cache"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // The partial-failure manifest still records every job.
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 3);
    assert!(manifest.contains("base,1,failed"));
}

#[test]
fn reference_solve_writes_solution_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("ref");
    let cfg_path = tmp.path().join("exp.toml");
    std::fs::write(&cfg_path, tiny_config(&tmp.path().join("unused"))).unwrap();

    run_ok(bin()
        .args(["reference-solve", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out_dir)
        .env("OSCIDAL_CACHE_DIR", tmp.path().join("cache")));

    let solution = std::fs::read_to_string(out_dir.join("solution.csv")).unwrap();
    let mut lines = solution.lines();
    assert_eq!(lines.next().unwrap(), "s,re,im,exact_re,exact_im");
    assert_eq!(lines.count(), 11);

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n"], 11);
    assert_eq!(report["p"], 10);
    let re = report["relative_error"].as_f64().unwrap();
    assert!(re.is_finite() && re >= 0.0);
    assert!(report["relative_error_ceiling"].as_f64().unwrap() > 0.0);
}

#[test]
fn dump_matrix_bytes_match_the_documented_format_and_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("exp.toml");
    std::fs::write(&cfg_path, tiny_config(&tmp.path().join("unused"))).unwrap();
    let dump = tmp.path().join("matrix.oscm");

    run_ok(bin()
        .args(["dump-matrix", "--config"])
        .arg(&cfg_path)
        .arg("--output")
        .arg(&dump));

    // Parse by the documented layout rather than the writer's own reader:
    // magic, version u32 LE, 32 tag bytes, count u64 LE, count (re, im)
    // f64 LE pairs, 32-byte digest.
    let bytes = std::fs::read(&dump).unwrap();
    assert_eq!(&bytes[0..4], b"OSCM");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let count = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    assert_eq!(count, 11 * 11);
    assert_eq!(bytes.len(), 48 + 16 * count + 32);
    let mut entries = Vec::with_capacity(count);
    for k in 0..count {
        let at = 48 + 16 * k;
        entries.push(Complex64::new(
            f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
            f64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap()),
        ));
    }

    // Independent route: assemble the same matrix through the library.
    let problem = oscidal::problem::ProblemSpec::new(
        oscidal::problem::KernelSpec::Constant(0.45),
        1.0,
        oscidal::problem::ExactSolutionSpec::Bands(vec![oscidal::problem::Band {
            coeff: oscidal::problem::BandCoeff::Exp,
            freq: 0.0,
        }]),
    )
    .unwrap();
    let op = oscidal::operator::DiscreteOperator::new(
        problem,
        oscidal::operator::QuadratureConfig {
            cap_gamma: 2.0,
            beta: 1.0,
            gamma: 10.0,
            q: 1,
        },
    )
    .unwrap();
    let matrix = oscidal::operator::assemble_matrix(&op);
    assert_eq!(matrix.n(), 11);
    for (k, &dumped) in entries.iter().enumerate() {
        let expect = matrix.entries().at(k / 11, k % 11);
        assert_eq!(dumped, expect, "entry {k}");
    }
}

#[test]
fn seed_override_trains_exactly_one_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let cfg_path = tmp.path().join("exp.toml");
    std::fs::write(&cfg_path, tiny_config(&out_dir)).unwrap();
    run_ok(bin()
        .args(["train", "--config"])
        .arg(&cfg_path)
        .args(["--seed-override", "7"])
        .env("OSCIDAL_CACHE_DIR", tmp.path().join("cache")));
    assert!(out_dir.join("runs/base/seed7/run.json").exists());
    assert!(!out_dir.join("runs/base/seed1").exists());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
}
