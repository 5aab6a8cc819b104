//! Trapezoidal Nystrom discretization of the oscillatory integral operator.
//!
//! The quadrature uses p + 1 uniform nodes s_j = -1 + 2j/p with p =
//! ceil(gamma * kappa^beta), so the rule tracks the oscillation length
//! 1/kappa. Collocation happens on the finer uniform grid x_j = -1 +
//! 2j/(p q), N = p q + 1 points, whose every q-th point is a quadrature
//! node; both grids are generated from the same integer expression so
//! shared points are bit-identical.
//!
//! The collocation matrix is M = I - B/p, where row j of B holds
//! w_l K(x_j, x_l) exp(i kappa |x_j - x_l|) with trapezoid weights w in
//! {1, 2} on quadrature columns and 0 elsewhere; 1/p = h/2 is the composite
//! trapezoid prefactor.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{lu_factor, pairwise_sum_c64, sum_sq_magnitudes, CMat, Lu, C64};
use crate::problem::{eval_exact, ComplexGridFunction, ProblemSpec};

/// Quadrature parameters. `cap_gamma` is the kernel-smoothness exponent
/// (called Gamma in the error bound), `gamma`/`beta` size the rule as
/// p = ceil(gamma * kappa^beta), and `q` is the collocation refinement
/// factor between quadrature nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureConfig {
    pub cap_gamma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: usize,
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cap_gamma.is_finite() && self.cap_gamma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Gamma must be finite and >= 0, got {}",
                self.cap_gamma
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must be finite and >= 1, got {}",
                self.beta
            )));
        }
        if !(self.gamma.is_finite() && self.gamma >= self.cap_gamma + 3.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be finite and >= Gamma + 3 = {}, got {}",
                self.cap_gamma + 3.0,
                self.gamma
            )));
        }
        if self.q == 0 {
            return Err(Error::InvalidConfig("q must be >= 1".into()));
        }
        Ok(())
    }
}

/// Number of trapezoid subintervals p = ceil(gamma * kappa^beta).
pub fn quad_node_count(config: &QuadratureConfig, kappa: f64) -> Result<usize> {
    config.validate()?;
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "wavenumber must be finite and >= 1, got {kappa}"
        )));
    }
    // beta = 1 is the common case; powf(x, 1.0) is not guaranteed exact.
    let scaled = if self_beta_is_one(config) {
        config.gamma * kappa
    } else {
        config.gamma * kappa.powf(config.beta)
    };
    let p = scaled.ceil();
    if !(p >= 1.0 && p <= 1e8) {
        return Err(Error::InvalidConfig(format!(
            "subinterval count {p} out of supported range"
        )));
    }
    Ok(p as usize)
}

fn self_beta_is_one(config: &QuadratureConfig) -> bool {
    config.beta == 1.0
}

/// Collocation grid x_j = -1 + 2j/(p q), j = 0..=p*q (N = p*q + 1 points).
pub fn collocation_grid(config: &QuadratureConfig, kappa: f64) -> Result<Arc<[f64]>> {
    let p = quad_node_count(config, kappa)?;
    Ok(uniform_grid(p * config.q))
}

/// Nodes -1 + 2j/m for j = 0..=m. Shared with the quadrature grid: for
/// j = d*q the expression 2(dq)/(pq) and 2d/p are the same real number, so
/// IEEE division yields bit-identical grid points.
pub fn uniform_grid(m: usize) -> Arc<[f64]> {
    (0..=m)
        .map(|j| -1.0 + 2.0 * j as f64 / m as f64)
        .collect()
}

/// The discrete operator K_p: trapezoid quadrature of the oscillatory
/// kernel against samples on the quadrature grid, evaluable at arbitrary
/// target points.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    problem: ProblemSpec,
    config: QuadratureConfig,
    p: usize,
    quad_nodes: Arc<[f64]>,
}

impl DiscreteOperator {
    pub fn new(problem: ProblemSpec, config: QuadratureConfig) -> Result<Self> {
        let p = quad_node_count(&config, problem.kappa)?;
        Ok(DiscreteOperator {
            problem,
            config,
            p,
            quad_nodes: uniform_grid(p),
        })
    }

    /// Operator with an explicitly chosen subinterval count, bypassing the
    /// p = ceil(gamma kappa^beta) derivation. Intended for cross-checks
    /// against external entry-rule evaluations at hand-picked sizes; only
    /// the gamma-derived constructor carries the quadrature error bound,
    /// so the bound constraint gamma >= Gamma + 3 is not imposed here.
    pub fn with_subintervals(problem: ProblemSpec, p: usize, q: usize) -> Result<Self> {
        if p == 0 || p > 100_000_000 {
            return Err(Error::InvalidConfig(format!(
                "subinterval count must lie in 1..=1e8, got {p}"
            )));
        }
        if q == 0 {
            return Err(Error::InvalidConfig("q must be >= 1".into()));
        }
        // Stored gamma reproduces p under the beta = 1 rule, purely for
        // reporting; p itself is authoritative from here on.
        let config = QuadratureConfig {
            cap_gamma: 0.0,
            beta: 1.0,
            gamma: p as f64 / problem.kappa,
            q,
        };
        Ok(DiscreteOperator {
            problem,
            config,
            p,
            quad_nodes: uniform_grid(p),
        })
    }

    /// Same problem and config with an explicitly refined rule (r * p
    /// subintervals); used by the a posteriori error surrogate.
    pub fn refined(&self, refinement: usize) -> Result<Self> {
        if refinement < 2 {
            return Err(Error::InvalidConfig(
                "refinement factor must be >= 2".into(),
            ));
        }
        let p = self
            .p
            .checked_mul(refinement)
            .filter(|&p| p <= 100_000_000)
            .ok_or_else(|| Error::InvalidConfig("refined rule too large".into()))?;
        Ok(DiscreteOperator {
            problem: self.problem.clone(),
            config: self.config.clone(),
            p,
            quad_nodes: uniform_grid(p),
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn config(&self) -> &QuadratureConfig {
        &self.config
    }

    /// Subinterval count p; the rule has p + 1 nodes.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn quad_nodes(&self) -> &Arc<[f64]> {
        &self.quad_nodes
    }

    pub fn quad_grid_id(&self) -> String {
        format!("quad:p={}", self.p)
    }

    /// Collocation node count N = p q + 1.
    pub fn collocation_count(&self) -> usize {
        self.p * self.config.q + 1
    }

    pub fn collocation_nodes(&self) -> Arc<[f64]> {
        uniform_grid(self.p * self.config.q)
    }

    pub fn collocation_grid_id(&self) -> String {
        format!("colloc:p={}:q={}", self.p, self.config.q)
    }

    /// Trapezoid weight of quadrature node j (already excluding the 1/p
    /// prefactor): 1 at the ends, 2 inside.
    #[inline]
    fn node_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.p {
            1.0
        } else {
            2.0
        }
    }
}

/// Apply the discrete operator to samples on the quadrature grid:
/// (K_p F)(x) = (1/p) sum_j w_j K(x, s_j) e^{i kappa |x - s_j|} F(s_j).
pub fn apply_discrete_operator(
    op: &DiscreteOperator,
    f: &ComplexGridFunction,
    targets: &[f64],
) -> Result<Vec<C64>> {
    if !f.same_grid_as(&op.quad_nodes) {
        return Err(Error::GridMismatch(format!(
            "operator expects samples on {} ({} nodes), got {} ({} nodes)",
            op.quad_grid_id(),
            op.quad_nodes.len(),
            f.grid_id,
            f.len()
        )));
    }
    let kappa = op.problem.kappa;
    let inv_p = 1.0 / op.p as f64;
    let mut terms = vec![C64::new(0.0, 0.0); op.quad_nodes.len()];
    let mut out = Vec::with_capacity(targets.len());
    for &x in targets {
        for (j, (&s, &fv)) in op.quad_nodes.iter().zip(&f.values).enumerate() {
            let kv = op.problem.kernel.eval(x, s);
            let (im, re) = (kappa * (x - s).abs()).sin_cos();
            terms[j] = op.node_weight(j) * kv * C64::new(re, im) * fv;
        }
        out.push(inv_p * pairwise_sum_c64(&terms));
    }
    Ok(out)
}

/// Dense collocation matrix M = I - B/p with its lazily computed LU
/// factorization. `omega` = exp(2 i kappa/(q p)) is the phase step between
/// adjacent collocation nodes: every off-diagonal phase is an integer power
/// of it.
#[derive(Debug)]
pub struct OperatorMatrix {
    n: usize,
    entries: CMat,
    omega: C64,
    lu: OnceLock<std::result::Result<Lu, SingularInfo>>,
}

#[derive(Clone, Debug)]
struct SingularInfo {
    step: usize,
    pivot: f64,
    threshold: f64,
}

impl OperatorMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    pub fn omega(&self) -> C64 {
        self.omega
    }

    /// Wrap an explicit dense matrix (synthetic systems, tests, dumps read
    /// back from disk). `omega` is meaningless here and set to 1.
    pub fn from_dense(entries: CMat) -> Result<Self> {
        if entries.rows() != entries.cols() {
            return Err(Error::DimensionMismatch(format!(
                "operator matrix must be square, got {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        Ok(OperatorMatrix {
            n: entries.rows(),
            entries,
            omega: C64::new(1.0, 0.0),
            lu: OnceLock::new(),
        })
    }

    pub fn lu(&self) -> Result<&Lu> {
        let cached = self.lu.get_or_init(|| match lu_factor(&self.entries) {
            Ok(lu) => Ok(lu),
            Err(Error::SingularMatrix {
                step,
                pivot,
                threshold,
            }) => Err(SingularInfo {
                step,
                pivot,
                threshold,
            }),
            Err(_) => unreachable!("lu_factor only fails with SingularMatrix"),
        });
        match cached {
            Ok(lu) => Ok(lu),
            Err(info) => Err(Error::SingularMatrix {
                step: info.step,
                pivot: info.pivot,
                threshold: info.threshold,
            }),
        }
    }
}

/// Assemble the dense collocation matrix of the discrete operator.
pub fn assemble_matrix(op: &DiscreteOperator) -> OperatorMatrix {
    let q = op.config().q;
    let n = op.collocation_count();
    let nodes = op.collocation_nodes();
    let kappa = op.problem.kappa;
    let inv_p = 1.0 / op.p as f64;
    let last = n - 1;
    let entries = CMat::from_fn(n, n, |j, l| {
        let diag = if j == l {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        };
        // Quadrature columns are every q-th collocation index.
        if l % q != 0 {
            return diag;
        }
        let w = if l == 0 || l == last { 1.0 } else { 2.0 };
        let kv = op.problem.kernel.eval(nodes[j], nodes[l]);
        let (im, re) = (kappa * (nodes[j] - nodes[l]).abs()).sin_cos();
        diag - w * inv_p * kv * C64::new(re, im)
    });
    let (im, re) = (2.0 * kappa / (q as f64 * op.p as f64)).sin_cos();
    OperatorMatrix {
        n,
        entries,
        omega: C64::new(re, im),
        lu: OnceLock::new(),
    }
}

/// Direct collocation solve M v = rhs with iterative refinement until the
/// relative residual is at most 1e-12.
pub fn reference_solve(matrix: &OperatorMatrix, rhs: &[C64]) -> Result<Vec<C64>> {
    if rhs.len() != matrix.n {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {0}x{0} but rhs has {1} entries",
            matrix.n,
            rhs.len()
        )));
    }
    let rhs_norm = sum_sq_magnitudes(rhs).sqrt();
    if rhs_norm == 0.0 {
        return Ok(vec![C64::new(0.0, 0.0); matrix.n]);
    }
    let lu = matrix.lu()?;
    let mut x = lu.solve(rhs);
    for _ in 0..3 {
        let mx = matrix.entries.matvec(&x);
        let r: Vec<C64> = rhs.iter().zip(&mx).map(|(b, v)| b - v).collect();
        let rel = sum_sq_magnitudes(&r).sqrt() / rhs_norm;
        if rel <= 1e-12 {
            return Ok(x);
        }
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    let mx = matrix.entries.matvec(&x);
    let r: Vec<C64> = rhs.iter().zip(&mx).map(|(b, v)| b - v).collect();
    let rel = sum_sq_magnitudes(&r).sqrt() / rhs_norm;
    if rel <= 1e-12 {
        Ok(x)
    } else {
        Err(Error::InvalidConfig(format!(
            "direct solve stalled at relative residual {rel:.3e} (matrix too ill-conditioned)"
        )))
    }
}

/// A priori quadrature error bound
/// E = 132 tau / (5 gamma kappa^beta)
///   + 81 tau (Gamma + 3)^m / (5 gamma^m kappa^{m (beta - 1)}),
/// where tau bounds the scaled kernel derivatives and m >= 1 is the
/// smoothness order used in the Euler-Maclaurin argument. Both tau and m
/// are caller-supplied.
pub fn quadrature_error_bound(
    config: &QuadratureConfig,
    kappa: f64,
    tau: f64,
    m: u32,
) -> Result<f64> {
    config.validate()?;
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "wavenumber must be finite and >= 1, got {kappa}"
        )));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "kernel derivative bound must be finite and >= 0, got {tau}"
        )));
    }
    if m < 1 {
        return Err(Error::InvalidConfig("smoothness order m must be >= 1".into()));
    }
    let mf = m as f64;
    let first = 132.0 * tau / (5.0 * config.gamma * kappa.powf(config.beta));
    let second = 81.0 * tau * (config.cap_gamma + 3.0).powf(mf)
        / (5.0 * config.gamma.powf(mf) * kappa.powf(mf * (config.beta - 1.0)));
    Ok(first + second)
}

/// A posteriori surrogate: seminorm over the collocation grid of
/// (K_{r p} - K_p) applied to the exact solution. Requires a manufactured
/// solution on the problem.
pub fn estimate_quadrature_error(op: &DiscreteOperator, refinement: usize) -> Result<f64> {
    if !op.problem.exact.is_some() {
        return Err(Error::NoExactSolution);
    }
    let refined = op.refined(refinement)?;
    let targets = op.collocation_nodes();
    let y_base = eval_exact(&op.problem, op.quad_grid_id(), op.quad_nodes.clone())?;
    let y_ref = eval_exact(&op.problem, refined.quad_grid_id(), refined.quad_nodes.clone())?;
    let base = apply_discrete_operator(op, &y_base, &targets)?;
    let fine = apply_discrete_operator(&refined, &y_ref, &targets)?;
    let diff: Vec<C64> = fine.iter().zip(&base).map(|(a, b)| a - b).collect();
    Ok((sum_sq_magnitudes(&diff) / diff.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Band, BandCoeff, ExactSolutionSpec, KernelSpec};

    fn config(gamma: f64, q: usize) -> QuadratureConfig {
        QuadratureConfig {
            cap_gamma: 2.0,
            beta: 1.0,
            gamma,
            q,
        }
    }

    fn unit_problem(kappa: f64) -> ProblemSpec {
        ProblemSpec::new(
            KernelSpec::Constant(0.45),
            kappa,
            ExactSolutionSpec::Bands(vec![Band {
                coeff: BandCoeff::One,
                freq: 0.0,
            }]),
        )
        .unwrap()
    }

    #[test]
    fn node_counts_match_rule() {
        assert_eq!(quad_node_count(&config(8.0, 1), 500.0).unwrap(), 4000);
        assert_eq!(quad_node_count(&config(10.0, 1), 500.0).unwrap(), 5000);
        assert_eq!(
            collocation_grid(&config(8.0, 1), 500.0).unwrap().len(),
            4001
        );
        assert_eq!(quad_node_count(&config(8.0, 1), 20.0).unwrap(), 160);
        // Non-integer product rounds up.
        assert_eq!(quad_node_count(&config(8.0, 1), 20.3).unwrap(), 163);
    }

    #[test]
    fn direct_subinterval_constructor_matches_derived_grids() {
        // p = 2 is unreachable through the gamma rule (gamma >= 3 forces
        // p >= 3) but must still assemble for entry-rule cross-checks.
        let op = DiscreteOperator::with_subintervals(unit_problem(1.0), 2, 1).unwrap();
        assert_eq!(op.p(), 2);
        assert_eq!(op.collocation_count(), 3);
        assert_eq!(&op.quad_nodes()[..], &[-1.0, 0.0, 1.0]);
        // Where both constructors express the same rule, they agree
        // entry for entry.
        let derived = DiscreteOperator::new(unit_problem(2.0), config(5.0, 2)).unwrap();
        let direct = DiscreteOperator::with_subintervals(unit_problem(2.0), 10, 2).unwrap();
        assert_eq!(derived.p(), direct.p());
        assert_eq!(&derived.quad_nodes()[..], &direct.quad_nodes()[..]);
        let m1 = assemble_matrix(&derived);
        let m2 = assemble_matrix(&direct);
        for j in 0..m1.n() {
            for l in 0..m1.n() {
                assert_eq!(m1.entries().at(j, l), m2.entries().at(j, l), "{j},{l}");
            }
        }
        assert!(DiscreteOperator::with_subintervals(unit_problem(1.0), 0, 1).is_err());
        assert!(DiscreteOperator::with_subintervals(unit_problem(1.0), 4, 0).is_err());
    }

    #[test]
    fn collocation_grid_contains_quadrature_nodes_bitwise() {
        let cfg = config(5.0, 3);
        let problem = unit_problem(7.0);
        let op = DiscreteOperator::new(problem, cfg.clone()).unwrap();
        let colloc = collocation_grid(&cfg, 7.0).unwrap();
        for (j, &s) in op.quad_nodes().iter().enumerate() {
            let x = colloc[j * cfg.q];
            assert_eq!(s.to_bits(), x.to_bits(), "node {j}");
        }
        assert_eq!(colloc[0], -1.0);
        assert_eq!(*colloc.last().unwrap(), 1.0);
    }

    #[test]
    fn trapezoid_value_at_left_endpoint_matches_hand_sum() {
        // K = 0.45, kappa = 1, p = 4, F = 1, target x = -1:
        // (h/2)[g0 + 2(g1+g2+g3) + g4] with g_j = 0.45 e^{i |x - s_j|},
        // s = {-1, -0.5, 0, 0.5, 1}. Expected value assembled here from
        // scalar complex arithmetic, independent of the operator code.
        let problem = unit_problem(1.0);
        let cfg = QuadratureConfig {
            cap_gamma: 1.0,
            beta: 1.0,
            gamma: 4.0,
            q: 1,
        };
        let op = DiscreteOperator::new(problem.clone(), cfg).unwrap();
        assert_eq!(op.p(), 4);
        let ones = ComplexGridFunction::new(
            op.quad_grid_id(),
            op.quad_nodes().clone(),
            vec![C64::new(1.0, 0.0); 5],
        )
        .unwrap();
        let got = apply_discrete_operator(&op, &ones, &[-1.0]).unwrap()[0];
        let g = |d: f64| 0.45 * C64::new(d.cos(), d.sin());
        let expect = 0.25 * (g(0.0) + 2.0 * (g(0.5) + g(1.0) + g(1.5)) + g(2.0));
        assert!((got - expect).norm() < 1e-15, "{got} vs {expect}");
    }

    #[test]
    fn matrix_diagonal_matches_constant_kernel_closed_form() {
        let problem = unit_problem(3.0);
        let op = DiscreteOperator::new(problem, config(5.0, 1)).unwrap();
        let p = op.p() as f64;
        let m = assemble_matrix(&op);
        let n = m.n();
        for j in 0..n {
            let expect = if j == 0 || j == n - 1 {
                1.0 - 0.45 / p
            } else {
                1.0 - 0.9 / p
            };
            let d = m.entries().at(j, j);
            assert!((d - C64::new(expect, 0.0)).norm() < 1e-15, "row {j}");
        }
    }

    #[test]
    fn matrix_phases_are_omega_powers() {
        let problem = unit_problem(19.0);
        let op = DiscreteOperator::new(problem, config(6.0, 2)).unwrap();
        let m = assemble_matrix(&op);
        let n = m.n();
        let p = op.p() as f64;
        let q = op.config().q;
        let last = n - 1;
        // entry(j,l) for j != l, l quadrature column: -w/p K omega^{|j-l|}.
        let mut worst: f64 = 0.0;
        for j in (0..n).step_by(7) {
            let mut pw = C64::new(1.0, 0.0);
            for d in 0..n {
                if d > 0 {
                    pw *= m.omega();
                }
                let l = if j >= d { j - d } else { continue };
                if l % q != 0 || l == j {
                    continue;
                }
                let w = if l == 0 || l == last { 1.0 } else { 2.0 };
                let expect = -w / p * 0.45 * pw;
                worst = worst.max((m.entries().at(j, l) - expect).norm());
            }
        }
        assert!(worst <= 1e-12, "worst deviation {worst:e}");
    }

    #[test]
    fn matrix_matches_brute_force_assembly() {
        // Independent reconstruction with explicit exp() calls and naive
        // loops, for a non-constant kernel and q > 1.
        let problem = ProblemSpec::new(
            KernelSpec::CosineProduct,
            2.5,
            ExactSolutionSpec::None,
        )
        .unwrap();
        let op = DiscreteOperator::new(problem.clone(), config(5.0, 2)).unwrap();
        let m = assemble_matrix(&op);
        let n = m.n();
        let nodes = op.collocation_nodes();
        let p = op.p();
        for j in 0..n {
            for l in 0..n {
                let mut expect = if j == l {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
                if l % 2 == 0 {
                    let d = l / 2;
                    let w = if d == 0 || d == p { 1.0 } else { 2.0 };
                    let phase = C64::new(0.0, 2.5 * (nodes[j] - nodes[l]).abs()).exp();
                    expect -= w / p as f64 * (nodes[j] * (nodes[l] + 1.0)).cos() * phase;
                }
                let got = m.entries().at(j, l);
                assert!(
                    (got - expect).norm() <= 1e-14,
                    "entry ({j},{l}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn matrix_and_operator_application_agree() {
        let problem = unit_problem(11.0);
        let op = DiscreteOperator::new(problem.clone(), config(5.0, 2)).unwrap();
        let m = assemble_matrix(&op);
        let targets = op.collocation_nodes();
        // Oscillatory but otherwise arbitrary samples on the quadrature grid.
        let values: Vec<C64> = op
            .quad_nodes()
            .iter()
            .map(|&s| C64::new((3.0 * s).sin(), (7.0 * s).cos()))
            .collect();
        let f = ComplexGridFunction::new(op.quad_grid_id(), op.quad_nodes().clone(), values)
            .unwrap();
        let applied = apply_discrete_operator(&op, &f, &targets).unwrap();
        // Extend samples to the collocation grid (zeros off quadrature
        // columns contribute nothing) and push through the matrix.
        let mut v = vec![C64::new(0.0, 0.0); m.n()];
        for (j, &fv) in f.values.iter().enumerate() {
            v[j * 2] = fv;
        }
        let mv = m.entries().matvec(&v);
        // M v = v - K_p v, so K_p v = v - M v must match the direct application.
        for j in 0..m.n() {
            assert!(
                ((v[j] - mv[j]) - applied[j]).norm() <= 1e-12,
                "target {j}"
            );
        }
    }

    #[test]
    fn reference_solve_diagonal_example() {
        let m = OperatorMatrix::from_dense(CMat::from_fn(2, 2, |i, j| {
            if i == j {
                C64::new(if i == 0 { 2.0 } else { 0.5 }, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
        .unwrap();
        let x = reference_solve(&m, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]).unwrap();
        assert!((x[0] - C64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((x[1] - C64::new(4.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn reference_solve_meets_residual_contract() {
        let problem = ProblemSpec::new(
            KernelSpec::Constant(0.45),
            6.0,
            ExactSolutionSpec::Example1 { freq_scale: 6.0 },
        )
        .unwrap();
        let op = DiscreteOperator::new(problem.clone(), config(8.0, 1)).unwrap();
        let m = assemble_matrix(&op);
        let colloc = op.collocation_nodes();
        let f = crate::problem::compute_rhs_with_cache(
            &problem,
            op.collocation_grid_id(),
            colloc.clone(),
            4,
            None,
        )
        .unwrap();
        let v = reference_solve(&m, &f.values).unwrap();
        let mv = m.entries().matvec(&v);
        let res: Vec<C64> = f.values.iter().zip(&mv).map(|(b, u)| b - u).collect();
        let rel = (sum_sq_magnitudes(&res) / sum_sq_magnitudes(&f.values)).sqrt();
        assert!(rel <= 1e-12, "relative residual {rel:e}");
        // And the solve tracks the manufactured solution to quadrature error.
        let y = eval_exact(&problem, op.collocation_grid_id(), colloc).unwrap();
        let err: Vec<C64> = v.iter().zip(&y.values).map(|(a, b)| a - b).collect();
        let re = (sum_sq_magnitudes(&err) / sum_sq_magnitudes(&y.values)).sqrt();
        assert!(re < 1e-2, "relative error {re:e}");
    }

    #[test]
    fn singular_matrix_reported() {
        let m = OperatorMatrix::from_dense(CMat::zeros(3, 3)).unwrap();
        match reference_solve(&m, &[C64::new(1.0, 0.0); 3]) {
            Err(Error::SingularMatrix { .. }) => {}
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn error_bound_hand_value() {
        // tau = 1, Gamma = 2, gamma = 5, beta = 1, kappa = 1, m = 1:
        // 132/25 + 81*5/25 = 5.28 + 16.2 = 21.48.
        let cfg = QuadratureConfig {
            cap_gamma: 2.0,
            beta: 1.0,
            gamma: 5.0,
            q: 1,
        };
        let e = quadrature_error_bound(&cfg, 1.0, 1.0, 1).unwrap();
        assert!((e - 21.48).abs() < 1e-12, "{e}");
    }

    #[test]
    fn error_bound_decreases_in_gamma_and_kappa() {
        let mk = |gamma: f64| QuadratureConfig {
            cap_gamma: 2.0,
            beta: 1.0,
            gamma,
            q: 1,
        };
        let e1 = quadrature_error_bound(&mk(8.0), 10.0, 1.0, 2).unwrap();
        let e2 = quadrature_error_bound(&mk(16.0), 10.0, 1.0, 2).unwrap();
        let e3 = quadrature_error_bound(&mk(8.0), 100.0, 1.0, 2).unwrap();
        assert!(e2 < e1);
        assert!(e3 < e1);
    }

    #[test]
    fn refinement_surrogate_shrinks_under_gamma_doubling() {
        let problem = ProblemSpec::new(
            KernelSpec::Constant(0.45),
            5.0,
            ExactSolutionSpec::Example1 { freq_scale: 5.0 },
        )
        .unwrap();
        let r1 = estimate_quadrature_error(
            &DiscreteOperator::new(problem.clone(), config(8.0, 1)).unwrap(),
            2,
        )
        .unwrap();
        let r2 = estimate_quadrature_error(
            &DiscreteOperator::new(problem.clone(), config(16.0, 1)).unwrap(),
            2,
        )
        .unwrap();
        assert!(r2 < r1, "{r2} !< {r1}");
        assert!(r1 > 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(config(8.0, 1).validate().is_ok());
        assert!(QuadratureConfig {
            cap_gamma: 2.0,
            beta: 1.0,
            gamma: 4.0,
            q: 1
        }
        .validate()
        .is_err());
        assert!(QuadratureConfig {
            cap_gamma: 2.0,
            beta: 0.5,
            gamma: 8.0,
            q: 1
        }
        .validate()
        .is_err());
        assert!(config(8.0, 0).validate().is_err());
    }
}
