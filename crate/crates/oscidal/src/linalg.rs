//! Dense complex linear algebra sized for collocation systems (N up to a few
//! thousand): row-major matrices, LU with partial pivoting plus adjoint
//! solves on the same factorization, Householder least squares with column
//! pivoting and a minimum-norm completion for rank-deficient systems, and
//! fixed-order pairwise summation.
//!
//! Everything is direct and sequential. Determinism matters more than peak
//! throughput here: summations have a fixed association order, so repeated
//! runs produce bit-identical results.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Pairwise (cascade) summation with a fixed association order.
/// Deterministic, with O(log n) rounding-error growth instead of O(n).
pub fn pairwise_sum_f64(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum_f64(&xs[..mid]) + pairwise_sum_f64(&xs[mid..])
}

/// Complex counterpart of [`pairwise_sum_f64`].
pub fn pairwise_sum_c64(xs: &[C64]) -> C64 {
    if xs.len() <= 32 {
        let mut acc = C64::new(0.0, 0.0);
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum_c64(&xs[..mid]) + pairwise_sum_c64(&xs[mid..])
}

/// Sum of squared magnitudes, pairwise order.
pub fn sum_sq_magnitudes(xs: &[C64]) -> f64 {
    if xs.len() <= 32 {
        let mut acc = 0.0;
        for x in xs {
            acc += x.re * x.re + x.im * x.im;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    sum_sq_magnitudes(&xs[..mid]) + sum_sq_magnitudes(&xs[mid..])
}

/// Row-major dense complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        let mut y = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            y.push(dot_row(self.row(i), x));
        }
        y
    }

    /// Selected rows of A x, in the order given by `rows`.
    pub fn matvec_rows(&self, rows: &[usize], x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        rows.iter().map(|&i| dot_row(self.row(i), x)).collect()
    }

    /// t_l = sum_k A[rows[k], l] * w[k]: the column pairing used by batched
    /// loss gradients (t = A[rows, :]^T w, no conjugation).
    pub fn rows_weighted_columns(&self, rows: &[usize], w: &[C64]) -> Vec<C64> {
        assert_eq!(rows.len(), w.len(), "weight count mismatch");
        let mut t = vec![C64::new(0.0, 0.0); self.cols];
        for (&i, &wk) in rows.iter().zip(w) {
            for (tl, &a) in t.iter_mut().zip(self.row(i)) {
                *tl += a * wk;
            }
        }
        t
    }

    /// y = A^H x.
    pub fn adjoint_matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.rows, "adjoint matvec dimension mismatch");
        let mut y = vec![C64::new(0.0, 0.0); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (yl, &a) in y.iter_mut().zip(self.row(i)) {
                *yl += a.conj() * xi;
            }
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[inline]
fn dot_row(row: &[C64], x: &[C64]) -> C64 {
    // Four independent accumulators keep the fp order fixed while letting the
    // compiler pipeline the multiplies.
    let n = row.len();
    let chunks = n / 4;
    let (mut a0, mut a1, mut a2, mut a3) = (
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
    );
    for c in 0..chunks {
        let k = 4 * c;
        a0 += row[k] * x[k];
        a1 += row[k + 1] * x[k + 1];
        a2 += row[k + 2] * x[k + 2];
        a3 += row[k + 3] * x[k + 3];
    }
    let mut acc = (a0 + a1) + (a2 + a3);
    for k in 4 * chunks..n {
        acc += row[k] * x[k];
    }
    acc
}

/// LU factorization with partial pivoting: P A = L U, stored packed.
/// `perm[k]` is the original row index that ended up in position k.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    data: Vec<C64>,
    perm: Vec<usize>,
}

pub fn lu_factor(a: &CMat) -> Result<Lu> {
    assert_eq!(a.rows(), a.cols(), "LU needs a square matrix");
    let n = a.rows();
    let mut data = a.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let threshold = n as f64 * f64::EPSILON * a.max_abs();

    for k in 0..n {
        let mut piv = k;
        let mut piv_mag = data[k * n + k].norm_sqr();
        for i in (k + 1)..n {
            let mag = data[i * n + k].norm_sqr();
            if mag > piv_mag {
                piv = i;
                piv_mag = mag;
            }
        }
        let piv_abs = piv_mag.sqrt();
        if piv_abs <= threshold {
            return Err(Error::SingularMatrix {
                step: k,
                pivot: piv_abs,
                threshold,
            });
        }
        if piv != k {
            for j in 0..n {
                data.swap(k * n + j, piv * n + j);
            }
            perm.swap(k, piv);
        }
        let pivot = data[k * n + k];
        for i in (k + 1)..n {
            let factor = data[i * n + k] / pivot;
            data[i * n + k] = factor;
            if factor.re != 0.0 || factor.im != 0.0 {
                let (upper, lower) = data.split_at_mut(i * n);
                let row_k = &upper[k * n..k * n + n];
                let row_i = &mut lower[..n];
                for j in (k + 1)..n {
                    row_i[j] -= factor * row_k[j];
                }
            }
        }
    }
    Ok(Lu { n, data, perm })
}

impl Lu {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let n = self.n;
        // Forward: L z = P b (unit lower diagonal).
        let mut x: Vec<C64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for k in 1..n {
            let mut acc = x[k];
            for j in 0..k {
                acc -= self.data[k * n + j] * x[j];
            }
            x[k] = acc;
        }
        // Backward: U x = z.
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in (k + 1)..n {
                acc -= self.data[k * n + j] * x[j];
            }
            x[k] = acc / self.data[k * n + k];
        }
        x
    }

    /// Solve A^H x = b on the same factorization.
    /// From A = P^T L U: A^H = U^H L^H P, so U^H u = b, L^H v = u, x = P^T v.
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let n = self.n;
        // U^H is lower triangular with diagonal conj(U_kk).
        let mut u = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            let mut acc = b[k];
            for j in 0..k {
                acc -= self.data[j * n + k].conj() * u[j];
            }
            u[k] = acc / self.data[k * n + k].conj();
        }
        // L^H is unit upper triangular.
        for k in (0..n).rev() {
            let mut acc = u[k];
            for j in (k + 1)..n {
                acc -= self.data[j * n + k].conj() * u[j];
            }
            u[k] = acc;
        }
        let mut x = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            x[self.perm[k]] = u[k];
        }
        x
    }
}

/// Minimum-norm least-squares solution of A x ~ b for dense complex A (m x n,
/// any shape, any rank): Householder QR with column pivoting, followed by a
/// second QR on the adjoint of the leading block when the numerical rank
/// r < n (complete orthogonal decomposition, LAPACK xGELSY-style). Returns
/// the x of minimum 2-norm among the 2-norm residual minimizers.
pub fn lstsq_min_norm(a: &CMat, b: &[C64]) -> Vec<C64> {
    let m = a.rows();
    let n = a.cols();
    assert_eq!(b.len(), m, "rhs length mismatch");
    let mut r = a.data.clone();
    let mut qtb = b.to_vec();
    let mut col_perm: Vec<usize> = (0..n).collect();
    let kmax = m.min(n);

    // Column-pivoted Householder sweep. Reflector tails stay in the strict
    // lower triangle; only Q^H b and the upper triangle are needed afterwards,
    // so overwriting each diagonal with its R value is safe here.
    for k in 0..kmax {
        let mut best = k;
        let mut best_norm = column_tail_norm_sqr(&r, n, m, k, k);
        for j in (k + 1)..n {
            let nrm = column_tail_norm_sqr(&r, n, m, j, k);
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        if best != k {
            for i in 0..m {
                r.swap(i * n + k, i * n + best);
            }
            col_perm.swap(k, best);
        }
        let sigma = best_norm.sqrt();
        if sigma == 0.0 {
            continue;
        }
        let x0 = r[k * n + k];
        let alpha = if x0.norm() == 0.0 {
            C64::new(-sigma, 0.0)
        } else {
            -(x0 / x0.norm()) * sigma
        };
        // v = x - alpha e1, H = I - t v v^H with t = 2/||v||^2; H x = alpha e1.
        r[k * n + k] = x0 - alpha;
        let vnorm_sqr: f64 = (k..m).map(|i| r[i * n + k].norm_sqr()).sum();
        let t = 2.0 / vnorm_sqr;
        for j in (k + 1)..n {
            let mut w = C64::new(0.0, 0.0);
            for i in k..m {
                w += r[i * n + k].conj() * r[i * n + j];
            }
            w *= t;
            for i in k..m {
                let v = r[i * n + k];
                r[i * n + j] -= w * v;
            }
        }
        let mut w = C64::new(0.0, 0.0);
        for i in k..m {
            w += r[i * n + k].conj() * qtb[i];
        }
        w *= t;
        for i in k..m {
            let v = r[i * n + k];
            qtb[i] -= w * v;
        }
        r[k * n + k] = alpha;
    }

    // Numerical rank from the pivoted diagonal.
    let rank_tol = m.max(n) as f64 * f64::EPSILON * r[0].norm();
    let mut rank = 0;
    for k in 0..kmax {
        if r[k * n + k].norm() > rank_tol {
            rank = k + 1;
        } else {
            break;
        }
    }
    if rank == 0 {
        return vec![C64::new(0.0, 0.0); n];
    }

    let xp = if rank == n {
        // Full column rank: back substitution on R[0..n, 0..n].
        let mut xp = vec![C64::new(0.0, 0.0); n];
        for k in (0..n).rev() {
            let mut acc = qtb[k];
            for j in (k + 1)..n {
                acc -= r[k * n + j] * xp[j];
            }
            xp[k] = acc / r[k * n + k];
        }
        xp
    } else {
        min_norm_completion(&r, n, rank, &qtb[..rank])
    };

    let mut x = vec![C64::new(0.0, 0.0); n];
    for (i, &ci) in col_perm.iter().enumerate() {
        x[ci] = xp[i];
    }
    x
}

/// Minimum-norm solution of [R1 R2] x = c where [R1 R2] is the leading
/// rank x n block of the triangularized matrix (R1 invertible upper).
/// Factor B = [R1 R2]^H = Q2 T; then [R1 R2] = T^H Q2^H, and the minimizer
/// is x = Q2 [w; 0] with T^H w = c. Reflector vectors are kept intact
/// (diagonals of T stored separately) because Q2 must be applied afterwards.
fn min_norm_completion(r: &[C64], n: usize, rank: usize, c: &[C64]) -> Vec<C64> {
    let rk = rank;
    // B[j, i] = conj(R[i, j]), j in 0..n, i in 0..rk; R is upper triangular
    // in its first rk columns (strict lower storage there holds reflector
    // tails from the first factorization, which must read as zero).
    let mut bmat = vec![C64::new(0.0, 0.0); n * rk];
    for i in 0..rk {
        for j in i..n {
            bmat[j * rk + i] = r[i * n + j].conj();
        }
    }
    let mut btau = vec![0.0f64; rk];
    let mut bdiag = vec![C64::new(0.0, 0.0); rk];
    for k in 0..rk {
        let norm_sqr: f64 = (k..n).map(|i| bmat[i * rk + k].norm_sqr()).sum();
        let sigma = norm_sqr.sqrt();
        if sigma == 0.0 {
            // Cannot happen for invertible R1, but keep the loop total.
            btau[k] = 0.0;
            continue;
        }
        let x0 = bmat[k * rk + k];
        let alpha = if x0.norm() == 0.0 {
            C64::new(-sigma, 0.0)
        } else {
            -(x0 / x0.norm()) * sigma
        };
        bmat[k * rk + k] = x0 - alpha;
        let vnorm_sqr: f64 = (k..n).map(|i| bmat[i * rk + k].norm_sqr()).sum();
        let t = 2.0 / vnorm_sqr;
        btau[k] = t;
        bdiag[k] = alpha;
        for j in (k + 1)..rk {
            let mut w = C64::new(0.0, 0.0);
            for i in k..n {
                w += bmat[i * rk + k].conj() * bmat[i * rk + j];
            }
            w *= t;
            for i in k..n {
                let v = bmat[i * rk + k];
                bmat[i * rk + j] -= w * v;
            }
        }
    }
    // Forward solve T^H w = c; T[j, k] for j < k sits at bmat[j*rk + k]
    // (row j is final once reflector j has run), T[k, k] in bdiag.
    let mut wvec = vec![C64::new(0.0, 0.0); rk];
    for k in 0..rk {
        let mut acc = c[k];
        for j in 0..k {
            acc -= bmat[j * rk + k].conj() * wvec[j];
        }
        wvec[k] = acc / bdiag[k].conj();
    }
    // x = Q2 [w; 0]: reflectors in reverse order on the padded vector.
    let mut xv = vec![C64::new(0.0, 0.0); n];
    xv[..rk].copy_from_slice(&wvec);
    for k in (0..rk).rev() {
        let t = btau[k];
        if t == 0.0 {
            continue;
        }
        let mut w = C64::new(0.0, 0.0);
        for i in k..n {
            w += bmat[i * rk + k].conj() * xv[i];
        }
        w *= t;
        for i in k..n {
            let v = bmat[i * rk + k];
            xv[i] -= w * v;
        }
    }
    xv
}

fn column_tail_norm_sqr(r: &[C64], n: usize, m: usize, col: usize, from_row: usize) -> f64 {
    (from_row..m).map(|i| r[i * n + col].norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_cmat(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> CMat {
        CMat::from_fn(rows, cols, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn random_cvec(rng: &mut ChaCha12Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn pairwise_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum_f64(&xs) - naive).abs() < 1e-9);
    }

    #[test]
    fn lu_solve_reproduces_rhs() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for n in [1, 2, 3, 7, 25, 60] {
            let a = random_cmat(&mut rng, n, n);
            let x_true = random_cvec(&mut rng, n);
            let b = a.matvec(&x_true);
            let lu = lu_factor(&a).expect("well-conditioned random matrix");
            let x = lu.solve(&b);
            let err: f64 = x
                .iter()
                .zip(&x_true)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err:e}");
        }
    }

    #[test]
    fn lu_adjoint_solve_matches_explicit_adjoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for n in [2, 5, 17, 40] {
            let a = random_cmat(&mut rng, n, n);
            let b = random_cvec(&mut rng, n);
            let lu = lu_factor(&a).unwrap();
            let x = lu.solve_adjoint(&b);
            // Check A^H x = b directly.
            let ahx = a.adjoint_matvec(&x);
            let err: f64 = ahx
                .iter()
                .zip(&b)
                .map(|(u, v)| (u - v).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err:e}");
        }
    }

    #[test]
    fn lu_rejects_singular() {
        // Rank-1 matrix.
        let a = CMat::from_fn(3, 3, |i, j| C64::new((i + 1) as f64 * (j + 1) as f64, 0.0));
        match lu_factor(&a) {
            Err(Error::SingularMatrix { .. }) => {}
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn lstsq_full_rank_solves_square_system() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_cmat(&mut rng, 6, 6);
        let x_true = random_cvec(&mut rng, 6);
        let b = a.matvec(&x_true);
        let x = lstsq_min_norm(&a, &b);
        let err: f64 = x
            .iter()
            .zip(&x_true)
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err={err:e}");
    }

    #[test]
    fn lstsq_overdetermined_residual_is_orthogonal_to_range() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = random_cmat(&mut rng, 12, 5);
        let b = random_cvec(&mut rng, 12);
        let x = lstsq_min_norm(&a, &b);
        let ax = a.matvec(&x);
        let res: Vec<C64> = b.iter().zip(&ax).map(|(u, v)| u - v).collect();
        // Normal equations: A^H r = 0 at the minimizer.
        let ahr = a.adjoint_matvec(&res);
        let err = ahr.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "err={err:e}");
    }

    #[test]
    fn lstsq_rank_deficient_picks_minimum_norm() {
        // Columns 0 and 2 identical: any solution can shift weight between
        // them; the min-norm answer splits it evenly.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let base = random_cmat(&mut rng, 8, 2);
        let a = CMat::from_fn(8, 3, |i, j| match j {
            0 => base.at(i, 0),
            1 => base.at(i, 1),
            _ => base.at(i, 0),
        });
        let coeffs = [C64::new(2.0, 1.0), C64::new(-0.5, 0.3)];
        let b: Vec<C64> = (0..8)
            .map(|i| base.at(i, 0) * coeffs[0] + base.at(i, 1) * coeffs[1])
            .collect();
        let x = lstsq_min_norm(&a, &b);
        assert!((x[0] - coeffs[0] / 2.0).norm() < 1e-9, "x0={:?}", x[0]);
        assert!((x[2] - coeffs[0] / 2.0).norm() < 1e-9, "x2={:?}", x[2]);
        assert!((x[1] - coeffs[1]).norm() < 1e-9);
        let ax = a.matvec(&x);
        let res: f64 = b.iter().zip(&ax).map(|(u, v)| (u - v).norm()).sum();
        assert!(res < 1e-9);
    }

    #[test]
    fn lstsq_zero_matrix_returns_zero() {
        let a = CMat::zeros(4, 3);
        let b = vec![C64::new(1.0, 0.0); 4];
        let x = lstsq_min_norm(&a, &b);
        assert!(x.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rows_weighted_columns_matches_transpose_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let a = random_cmat(&mut rng, 7, 4);
        let rows = [5usize, 0, 3];
        let w = random_cvec(&mut rng, 3);
        let t = a.rows_weighted_columns(&rows, &w);
        for l in 0..4 {
            let expect = a.at(5, l) * w[0] + a.at(0, l) * w[1] + a.at(3, l) * w[2];
            assert!((t[l] - expect).norm() < 1e-14);
        }
    }
}
