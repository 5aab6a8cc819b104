//! Dual-route numerical checks: every hand-rolled dense kernel (LU,
//! least squares, norm estimation, head refit) is compared against an
//! independent nalgebra implementation on seeded random inputs. The two
//! routes share no code, so agreement pins down both.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use oscidal::linalg::{lstsq_min_norm, CMat, C64};
use oscidal::metrics::{condition_estimate, inverse_norm_estimate, operator_norm_estimate};
use oscidal::mgdl::refit_head;
use oscidal::net::RMat;
use oscidal::operator::OperatorMatrix;

fn random_cmat(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

fn to_dmatrix(a: &CMat) -> DMatrix<C64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a.at(i, j))
}

#[test]
fn norm_estimates_match_dense_svd() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    for trial in 0..5 {
        // Shift the diagonal away from singularity so the inverse norm is
        // well defined on every draw.
        let mut a = random_cmat(&mut rng, 20, 20);
        let shifted = CMat::from_fn(20, 20, |i, j| {
            a.at(i, j)
                + if i == j {
                    C64::new(2.5, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
        });
        a = shifted;
        let dense = to_dmatrix(&a);
        let sv = dense.svd(false, false).singular_values;
        let sigma_max = sv.iter().cloned().fold(0.0f64, f64::max);
        let sigma_min = sv.iter().cloned().fold(f64::INFINITY, f64::min);

        let m = OperatorMatrix::from_dense(a).unwrap();
        let norm = operator_norm_estimate(&m);
        assert!(norm.converged, "trial {trial}: norm estimate not converged");
        assert!(
            (norm.value - sigma_max).abs() <= 1e-6 * sigma_max,
            "trial {trial}: {} vs sigma_max {}",
            norm.value,
            sigma_max
        );

        let inv = inverse_norm_estimate(&m).unwrap();
        assert!(inv.converged, "trial {trial}: inverse estimate not converged");
        assert!(
            (inv.value - 1.0 / sigma_min).abs() <= 1e-6 / sigma_min,
            "trial {trial}: {} vs 1/sigma_min {}",
            inv.value,
            1.0 / sigma_min
        );

        let cond = condition_estimate(&m).unwrap();
        let cond_svd = sigma_max / sigma_min;
        assert!(
            (cond - cond_svd).abs() <= 2e-6 * cond_svd,
            "trial {trial}: cond {cond} vs svd {cond_svd}"
        );
    }
}

#[test]
fn lu_solve_matches_dense_solver() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    for _ in 0..5 {
        let a = random_cmat(&mut rng, 12, 12);
        let b: Vec<C64> = (0..12)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let m = OperatorMatrix::from_dense(a.clone()).unwrap();
        let x = m.lu().unwrap().solve(&b);
        let dense = to_dmatrix(&a);
        let rhs = DMatrix::from_fn(12, 1, |i, _| b[i]);
        let x_ref = dense.lu().solve(&rhs).expect("reference LU solve");
        for i in 0..12 {
            assert!(
                (x[i] - x_ref[(i, 0)]).norm() <= 1e-10,
                "component {i}: {} vs {}",
                x[i],
                x_ref[(i, 0)]
            );
        }
    }
}

#[test]
fn least_squares_matches_svd_solver() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    // Overdetermined full-rank systems.
    for _ in 0..5 {
        let a = random_cmat(&mut rng, 15, 6);
        let b: Vec<C64> = (0..15)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let z = lstsq_min_norm(&a, &b);
        let dense = to_dmatrix(&a);
        let rhs = DMatrix::from_fn(15, 1, |i, _| b[i]);
        let z_ref = dense.clone().svd(true, true).solve(&rhs, 1e-12).unwrap();
        for k in 0..6 {
            assert!(
                (z[k] - z_ref[(k, 0)]).norm() <= 1e-10,
                "coefficient {k}: {} vs {}",
                z[k],
                z_ref[(k, 0)]
            );
        }
    }
}

#[test]
fn rank_deficient_least_squares_is_minimum_norm() {
    let mut rng = ChaCha12Rng::seed_from_u64(4242);
    // Column 3 duplicates column 0, so the solution space is a line; both
    // routes must pick the point of smallest norm on it.
    let base = random_cmat(&mut rng, 10, 4);
    let a = CMat::from_fn(10, 5, |i, j| if j < 4 { base.at(i, j) } else { base.at(i, 0) });
    let b: Vec<C64> = (0..10)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let z = lstsq_min_norm(&a, &b);
    let dense = to_dmatrix(&a);
    let rhs = DMatrix::from_fn(10, 1, |i, _| b[i]);
    let z_ref = dense.clone().svd(true, true).solve(&rhs, 1e-10).unwrap();
    for k in 0..5 {
        assert!(
            (z[k] - z_ref[(k, 0)]).norm() <= 1e-8,
            "coefficient {k}: {} vs {}",
            z[k],
            z_ref[(k, 0)]
        );
    }
    // Duplicated columns share their weight equally at the minimum-norm
    // point.
    assert!((z[0] - z[4]).norm() <= 1e-8, "{} vs {}", z[0], z[4]);
}

#[test]
fn head_refit_matches_brute_force_least_squares() {
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    // Random 5-node, width-3 case: assemble A = M [H | 1] densely and
    // solve with the reference SVD; fits must agree to 1e-10.
    let m_entries = random_cmat(&mut rng, 5, 5);
    let matrix = OperatorMatrix::from_dense(m_entries.clone()).unwrap();
    let feats = RMat::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
    let e: Vec<C64> = (0..5)
        .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();

    let z = refit_head(&matrix, &feats, &e).unwrap();

    let dense_m = to_dmatrix(&m_entries);
    let h = DMatrix::from_fn(5, 4, |i, k| {
        if k < 3 {
            C64::new(feats.at(i, k), 0.0)
        } else {
            C64::new(1.0, 0.0)
        }
    });
    let a = &dense_m * &h;
    let rhs = DMatrix::from_fn(5, 1, |i, _| e[i]);
    let z_ref = a.clone().svd(true, true).solve(&rhs, 1e-12).unwrap();

    let fit = &a * DMatrix::from_fn(4, 1, |k, _| z[k]);
    let fit_ref = &a * &z_ref;
    for i in 0..5 {
        assert!(
            (fit[(i, 0)] - fit_ref[(i, 0)]).norm() <= 1e-10,
            "fitted value {i}: {} vs {}",
            fit[(i, 0)],
            fit_ref[(i, 0)]
        );
    }
    for k in 0..4 {
        assert!(
            (z[k] - z_ref[(k, 0)]).norm() <= 1e-10,
            "coefficient {k}: {} vs {}",
            z[k],
            z_ref[(k, 0)]
        );
    }
}
