//! End-to-end checks of the residual-to-error bounds: an exactly solvable
//! collapse case, a desk-scale oscillatory run where both bound sides must
//! hold at every grade, and the diagnostic (never panicking) handling of
//! inconsistent records.

use oscidal::metrics::verify_bounds;
use oscidal::mgdl::{run_amgdl, AmgdlConfig, SolveContext, StopReason, StoppingRule};
use oscidal::net::TrainConfig;
use oscidal::operator::{DiscreteOperator, QuadratureConfig};
use oscidal::problem::{Band, BandCoeff, ExactSolutionSpec, KernelSpec, ProblemSpec};

fn quad(gamma: f64, q: usize) -> QuadratureConfig {
    QuadratureConfig {
        cap_gamma: 2.0,
        beta: 1.0,
        gamma,
        q,
    }
}

/// Zero-kernel context: M is exactly the identity, the refined and base
/// rules agree exactly (both integrate the zero function), and the right
/// hand side equals the manufactured solution sample for sample.
fn zero_kernel_ctx() -> SolveContext {
    let exact = ExactSolutionSpec::Bands(vec![
        Band {
            coeff: BandCoeff::Exp,
            freq: 0.0,
        },
        Band {
            coeff: BandCoeff::SinLinear,
            freq: std::f64::consts::PI,
        },
    ]);
    let problem = ProblemSpec::new(KernelSpec::Constant(0.0), 2.0, exact).unwrap();
    let op = DiscreteOperator::new(problem, quad(6.0, 1)).unwrap();
    SolveContext::build(op, 32, 9, 2, None).unwrap()
}

fn two_grade_cfg() -> AmgdlConfig {
    AmgdlConfig {
        max_grades: 2,
        min_grades: 2,
        tolerance: None,
        stopping: StoppingRule::TrainPlateau,
        grade_widths: vec![8],
        grade_epochs: None,
        train: TrainConfig::with_defaults(60, 4, 1e-2, 7),
        refit_last_layer: true,
        omega0: 1.0,
    }
}

#[test]
fn zero_kernel_collapses_bounds_to_the_residual() {
    let ctx = zero_kernel_ctx();
    let run = run_amgdl(&ctx, &two_grade_cfg()).unwrap();
    assert!(matches!(run.stop, StopReason::MaxGrades));
    let reports = verify_bounds(&run, ctx.op(), ctx.matrix()).unwrap();
    assert_eq!(reports.len(), 2);
    for (rec, rep) in run.records.iter().zip(&reports) {
        assert_eq!(rep.grade, rec.grade);
        assert_eq!(rep.residual_norm, rec.residual_norm);
        // No quadrature at all, so the refined-rule surrogate vanishes
        // identically and both norms are those of the identity.
        assert_eq!(rep.r_hat, 0.0);
        assert!((rep.norm_m - 1.0).abs() <= 1e-12, "norm_m {}", rep.norm_m);
        assert!(
            (rep.norm_m_inv - 1.0).abs() <= 1e-12,
            "norm_m_inv {}",
            rep.norm_m_inv
        );
        // The bound interval collapses onto the measured error.
        assert!(rep.measured_error > 0.0);
        let tol = 1e-12 * rep.measured_error;
        assert!(
            (rep.lower - rep.measured_error).abs() <= tol,
            "lower {} vs measured {}",
            rep.lower,
            rep.measured_error
        );
        assert!(
            (rep.upper - rep.measured_error).abs() <= tol,
            "upper {} vs measured {}",
            rep.upper,
            rep.measured_error
        );
    }
}

#[test]
fn bounds_hold_at_every_grade_on_a_desk_problem() {
    // Oscillatory desk case: product kernel, kappa = 10, three grades.
    // Honest residual records must land the measured error inside
    // [lower, upper] at every grade; the factor-2 margin on the quadrature
    // surrogate covers the discrete-vs-true operator gap.
    let problem = ProblemSpec::new(
        KernelSpec::CosineProduct,
        10.0,
        ExactSolutionSpec::Example1 { freq_scale: 10.0 },
    )
    .unwrap();
    let op = DiscreteOperator::new(problem, quad(8.0, 1)).unwrap();
    let ctx = SolveContext::build(op, 256, 5, 4, None).unwrap();
    let cfg = AmgdlConfig {
        max_grades: 3,
        min_grades: 3,
        tolerance: None,
        stopping: StoppingRule::TrainPlateau,
        grade_widths: vec![24],
        grade_epochs: None,
        train: TrainConfig::with_defaults(200, 16, 1e-2, 3),
        refit_last_layer: true,
        omega0: 10.0,
    };
    let run = run_amgdl(&ctx, &cfg).unwrap();
    assert!(matches!(run.stop, StopReason::MaxGrades), "{:?}", run.stop);
    let reports = verify_bounds(&run, ctx.op(), ctx.matrix()).unwrap();
    assert_eq!(reports.len(), 3);
    for rep in &reports {
        assert!(rep.r_hat > 0.0);
        assert!(rep.norm_m >= 1.0 - 1e-6, "norm_m {}", rep.norm_m);
        assert!(rep.norm_m_inv > 0.0);
        assert!(rep.lower <= rep.upper);
        assert!(rep.measured_error > 0.0);
        assert!(
            rep.lower_ok,
            "grade {}: lower {} > measured {}",
            rep.grade, rep.lower, rep.measured_error
        );
        assert!(
            rep.upper_ok,
            "grade {}: measured {} > upper {}",
            rep.grade, rep.measured_error, rep.upper
        );
    }
}

#[test]
fn doctored_residuals_flip_flags_without_error() {
    // Flags are diagnostic output: records inconsistent with the replayed
    // solution must produce false flags, not a panic or an Err.
    let ctx = zero_kernel_ctx();
    let mut run = run_amgdl(&ctx, &two_grade_cfg()).unwrap();
    let honest = verify_bounds(&run, ctx.op(), ctx.matrix()).unwrap();
    assert!(honest.iter().all(|r| r.measured_error > 1e-15));

    // Inflated residual: lower bound climbs above the measured error.
    run.records[0].residual_norm = 2.0 * honest[0].measured_error + 1.0;
    // Deflated residual: upper bound drops below the measured error.
    run.records[1].residual_norm = honest[1].measured_error / 2.0;

    let doctored = verify_bounds(&run, ctx.op(), ctx.matrix()).unwrap();
    assert!(!doctored[0].lower_ok, "inflated residual kept lower_ok");
    assert!(doctored[0].upper_ok);
    assert!(!doctored[1].upper_ok, "deflated residual kept upper_ok");
    assert!(doctored[1].lower_ok);
}
