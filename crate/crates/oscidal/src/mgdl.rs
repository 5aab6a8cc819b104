//! Grade-wise residual training.
//!
//! The solver represents the solution as a sum of shallow "grades": grade l
//! trains a one-hidden-layer sine network on top of the frozen feature map
//! produced by grades 1..l-1, fitting the residual those grades left
//! behind. Writing T for the complexification (u, v) -> u + iv of the
//! two-output head and M for the collocation matrix of I - K_p, grade l
//! minimizes the discrete squared residual
//!
//! ```text
//! loss(theta_l) = (1/N) sum_j |e*_{l-1}(x_j) - (M c_l)(x_j)|^2,
//! c_l = T(head(features_l)),   e*_0 = f on the collocation grid,
//! ```
//!
//! by mini-batch Adam: a batch selects which residual rows enter the loss,
//! while the network is still evaluated on all N nodes per step because M
//! couples every column. After Adam, an exact complex least-squares refit
//! of the head (on by default) restores the guarantee that residual
//! semi-norms never increase from grade to grade. The accumulated
//! approximation y*_l = sum_{j<=l} c_j and the residual e*_l are maintained
//! incrementally on both the training and validation grids.
//!
//! The driver [`run_amgdl`] trains grades until a stopping rule fires:
//! a residual tolerance eps/(2*||M^-1||), a validation-loss plateau, or a
//! training-residual plateau, always training at least `min_grades` and at
//! most `max_grades` grades. [`run_sgdl`] is the single-grade baseline:
//! one deep network trained once on the same loss.
//!
//! Everything is deterministic for a fixed seed: per-grade init and shuffle
//! randomness come from separate ChaCha streams, validation points are
//! drawn once per context, and all reductions are fixed-order.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, sum_sq_magnitudes, C64, CMat};
use crate::metrics::{inverse_norm_estimate, relative_l2_error};
use crate::net::{
    adam_step, backward, forward, init_params, AdamState, Architecture, LrSchedule, NetParams,
    RMat, TrainConfig, OUTPUT_DIM,
};
use crate::operator::{
    apply_discrete_operator, assemble_matrix, uniform_grid, DiscreteOperator, OperatorMatrix,
};
use crate::problem::{compute_rhs_with_cache, eval_exact, ComplexGridFunction};

/// Default number of validation points drawn uniformly from [-1, 1].
pub const DEFAULT_VAL_POINTS: usize = 2048;

/// Default oversample factor for the right-hand-side integrator.
pub const DEFAULT_RHS_OVERSAMPLE: usize = 4;

/// Subinterval count of the uniform grid on which per-grade relative
/// errors are reported (20001 sample points).
pub const ERROR_GRID_SUBINTERVALS: usize = 20000;

/// When to stop adding grades.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingRule {
    /// Stop once the training-grid residual satisfies
    /// ||e*_l||_N <= eps / (2 * ||M^-1||-estimate).
    Tolerance,
    /// Stop when validation loss fails to decrease versus the previous
    /// grade (ties count as plateau); the previous grade is selected.
    ValidationPlateau,
    /// As `ValidationPlateau`, but on the training-grid residual norm.
    TrainPlateau,
}

/// Configuration of one adaptive multi-grade run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AmgdlConfig {
    /// Hard cap on the number of grades.
    pub max_grades: usize,
    /// Grades always trained before any stopping rule may fire.
    pub min_grades: usize,
    /// Residual tolerance eps; required by [`StoppingRule::Tolerance`]
    /// (infinity is allowed and stops after `min_grades`).
    pub tolerance: Option<f64>,
    pub stopping: StoppingRule,
    /// Hidden width per grade; shorter lists repeat the last entry.
    pub grade_widths: Vec<usize>,
    /// Optional per-grade epoch overrides; None trains every grade for
    /// `train.epochs` epochs, shorter lists repeat the last entry.
    pub grade_epochs: Option<Vec<usize>>,
    pub train: TrainConfig,
    /// Exact head refit after Adam; on by default because Adam alone does
    /// not guarantee monotone residuals.
    pub refit_last_layer: bool,
    /// First-layer frequency gain for grade 1 (grades >= 2 consume
    /// features, not raw coordinates, and always use 1).
    pub omega0: f64,
}

impl AmgdlConfig {
    /// Plain equal-width config with the usual defaults: one candidate
    /// width, validation-plateau stopping, refit on.
    pub fn equal_width(max_grades: usize, width: usize, train: TrainConfig, omega0: f64) -> Self {
        AmgdlConfig {
            max_grades,
            min_grades: 1,
            tolerance: None,
            stopping: StoppingRule::ValidationPlateau,
            grade_widths: vec![width],
            grade_epochs: None,
            train,
            refit_last_layer: true,
            omega0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_grades == 0 {
            return Err(Error::InvalidConfig("max_grades must be >= 1".into()));
        }
        if self.min_grades == 0 || self.min_grades > self.max_grades {
            return Err(Error::InvalidConfig(format!(
                "min_grades must lie in 1..=max_grades, got {} with max {}",
                self.min_grades, self.max_grades
            )));
        }
        if self.grade_widths.is_empty() {
            return Err(Error::InvalidConfig("grade_widths must be nonempty".into()));
        }
        if self.grade_widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidConfig("grade widths must be >= 1".into()));
        }
        if let Some(epochs) = &self.grade_epochs {
            if epochs.is_empty() {
                return Err(Error::InvalidConfig(
                    "grade_epochs, when given, must be nonempty".into(),
                ));
            }
        }
        if self.stopping == StoppingRule::Tolerance {
            match self.tolerance {
                Some(t) if t > 0.0 && !t.is_nan() => {}
                _ => {
                    return Err(Error::InvalidConfig(
                        "tolerance stopping requires tolerance > 0".into(),
                    ))
                }
            }
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::InvalidConfig("omega0 must be finite and > 0".into()));
        }
        self.train.validate()
    }

    /// Hidden width of grade g (1-based); the last listed width repeats.
    pub fn width_of(&self, grade: usize) -> usize {
        let idx = (grade - 1).min(self.grade_widths.len() - 1);
        self.grade_widths[idx]
    }

    /// Epoch count of grade g (1-based).
    pub fn epochs_of(&self, grade: usize) -> usize {
        match &self.grade_epochs {
            Some(list) => list[(grade - 1).min(list.len() - 1)],
            None => self.train.epochs,
        }
    }
}

/// Everything a training run needs that depends only on the problem and
/// discretization, not on network hyperparameters: the assembled matrix,
/// the right-hand side on the collocation grid, and a fixed set of
/// validation points with the right-hand side sampled there. Built once
/// and shared by AMGDL, SGDL, and sweep runs so their losses are
/// comparable.
#[derive(Debug)]
pub struct SolveContext {
    op: DiscreteOperator,
    matrix: OperatorMatrix,
    rhs: Vec<C64>,
    val_nodes: Arc<[f64]>,
    rhs_val: Vec<C64>,
}

impl SolveContext {
    /// Assemble the matrix, compute (or load) the right-hand side on the
    /// collocation grid, and draw `val_points` i.i.d. uniform validation
    /// points from the `val_seed` stream.
    pub fn build(
        op: DiscreteOperator,
        val_points: usize,
        val_seed: u64,
        rhs_oversample: usize,
        cache_dir: Option<&Path>,
    ) -> Result<Self> {
        if val_points == 0 {
            return Err(Error::InvalidConfig("val_points must be >= 1".into()));
        }
        let matrix = assemble_matrix(&op);
        let colloc = op.collocation_nodes();
        let rhs = compute_rhs_with_cache(
            op.problem(),
            op.collocation_grid_id(),
            colloc,
            rhs_oversample,
            cache_dir,
        )?
        .values;
        let mut rng = ChaCha12Rng::seed_from_u64(val_seed);
        let val_nodes: Arc<[f64]> = (0..val_points)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let rhs_val = compute_rhs_with_cache(
            op.problem(),
            format!("val:n={val_points}:seed={val_seed}"),
            val_nodes.clone(),
            rhs_oversample,
            cache_dir,
        )?
        .values;
        Ok(SolveContext {
            op,
            matrix,
            rhs,
            val_nodes,
            rhs_val,
        })
    }

    pub fn op(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    /// Right-hand side f on the collocation grid (the grade-0 residual).
    pub fn rhs(&self) -> &[C64] {
        &self.rhs
    }

    pub fn val_nodes(&self) -> &Arc<[f64]> {
        &self.val_nodes
    }

    pub fn rhs_val(&self) -> &[C64] {
        &self.rhs_val
    }
}

/// Everything recorded about one trained grade.
#[derive(Clone, Debug)]
pub struct GradeRecord {
    /// Grade index, 1-based.
    pub grade: usize,
    /// The grade's own parameters (hidden layer(s) plus head).
    pub params: NetParams,
    /// First-layer gain the grade was initialized with.
    pub omega0: f64,
    /// Derived per-grade seed passed to parameter initialization.
    pub init_seed: u64,
    /// True once a later grade has started training on this grade's
    /// features; frozen parameters are never updated again.
    pub frozen: bool,
    /// Final squared residual semi-norm ||e*_l||_N^2 (after refit).
    pub train_loss: f64,
    /// Final validation loss (residual form at the validation points).
    pub val_loss: f64,
    /// Final residual semi-norm ||e*_l||_N.
    pub residual_norm: f64,
    /// Wall-clock seconds spent in train_grade (epoch loop, per-epoch
    /// diagnostics, refit); excludes matrix assembly and error reporting.
    pub wall_seconds: f64,
    /// Relative L2 error of the accumulated solution against the exact
    /// one, when the problem has one; filled in by the driver after the
    /// run, outside the timed section.
    pub relative_error: Option<f64>,
    /// Full-grid training loss after each epoch.
    pub epoch_train_loss: Vec<f64>,
    /// Validation loss after each epoch.
    pub epoch_val_loss: Vec<f64>,
}

/// Why a run stopped adding grades.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopReason {
    ToleranceMet,
    ValidationPlateau,
    TrainPlateau,
    MaxGrades,
    /// A grade aborted (non-finite loss); the records of the grades that
    /// completed are kept.
    GradeFailed { grade: usize, message: String },
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::ToleranceMet => write!(f, "tolerance-met"),
            StopReason::ValidationPlateau => write!(f, "validation-plateau"),
            StopReason::TrainPlateau => write!(f, "train-plateau"),
            StopReason::MaxGrades => write!(f, "max-grades"),
            StopReason::GradeFailed { grade, message } => {
                write!(f, "grade-failed: grade {grade}: {message}")
            }
        }
    }
}

/// Which driver produced a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Amgdl,
    Sgdl,
}

impl RunMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunMode::Amgdl => "amgdl",
            RunMode::Sgdl => "sgdl",
        }
    }
}

/// Full history of one training run.
#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub mode: RunMode,
    /// The run seed (grade-level seeds are derived from it).
    pub seed: u64,
    /// Every grade trained, in order, including grades past the selected
    /// solution (a plateau keeps the grade that triggered it on record).
    pub records: Vec<GradeRecord>,
    pub stop: StopReason,
    /// Number of grades forming the returned solution.
    pub selected: usize,
}

impl TrainingRun {
    /// The grades that make up the selected solution.
    pub fn selected_records(&self) -> &[GradeRecord] {
        &self.records[..self.selected]
    }
}

/// Mutable state threaded through the grades of one run: the frozen
/// feature pipeline's output on the training and validation grids, the
/// accumulated approximation on both grids, the current residual, and the
/// records of the grades trained so far.
#[derive(Debug)]
pub struct GradeStack<'a> {
    ctx: &'a SolveContext,
    coord_train: RMat,
    coord_val: RMat,
    feats_train: Option<RMat>,
    feats_val: Option<RMat>,
    accum_train: Vec<C64>,
    accum_val: Vec<C64>,
    residual: Vec<C64>,
    records: Vec<GradeRecord>,
}

impl<'a> GradeStack<'a> {
    pub fn new(ctx: &'a SolveContext) -> Self {
        let n = ctx.matrix.n();
        let v = ctx.val_nodes.len();
        GradeStack {
            ctx,
            coord_train: RMat::column(&ctx.op.collocation_nodes()),
            coord_val: RMat::column(&ctx.val_nodes),
            feats_train: None,
            feats_val: None,
            accum_train: vec![C64::new(0.0, 0.0); n],
            accum_val: vec![C64::new(0.0, 0.0); v],
            residual: ctx.rhs.clone(),
            records: Vec::new(),
        }
    }

    /// Current residual e*_l on the collocation grid (e*_0 = f).
    pub fn residual(&self) -> &[C64] {
        &self.residual
    }

    /// Accumulated approximation on the collocation grid.
    pub fn accumulated(&self) -> &[C64] {
        &self.accum_train
    }

    pub fn records(&self) -> &[GradeRecord] {
        &self.records
    }

    pub fn grade_count(&self) -> usize {
        self.records.len()
    }

    /// Input the next grade trains on: frozen features, or raw
    /// coordinates for grade 1.
    fn train_input(&self) -> &RMat {
        self.feats_train.as_ref().unwrap_or(&self.coord_train)
    }

    fn val_input(&self) -> &RMat {
        self.feats_val.as_ref().unwrap_or(&self.coord_val)
    }

    /// Residual left by a candidate head output: e*_prev - M c, full grid.
    pub fn candidate_residual(&self, candidate: &[C64]) -> Vec<C64> {
        let mc = self.ctx.matrix.entries().matvec(candidate);
        self.residual
            .iter()
            .zip(&mc)
            .map(|(&e, &m)| e - m)
            .collect()
    }

    /// Validation loss of the state "accumulated + candidate": the mean
    /// squared residual of the integral equation at the validation points,
    /// with the discrete operator applied through its canonical
    /// quadrature-node path.
    fn validation_loss(&self, c_train: &[C64], c_val: &[C64]) -> Result<f64> {
        let op = &self.ctx.op;
        let q = op.config().q;
        let y_quad: Vec<C64> = (0..=op.p())
            .map(|j| {
                let idx = j * q;
                self.accum_train[idx] + c_train[idx]
            })
            .collect();
        let g = ComplexGridFunction::new(op.quad_grid_id(), op.quad_nodes().clone(), y_quad)?;
        let ky = apply_discrete_operator(op, &g, &self.ctx.val_nodes)?;
        let sq: Vec<C64> = (0..self.ctx.val_nodes.len())
            .map(|x| {
                let y_here = self.accum_val[x] + c_val[x];
                self.ctx.rhs_val[x] - (y_here - ky[x])
            })
            .collect();
        Ok(sum_sq_magnitudes(&sq) / sq.len() as f64)
    }
}

/// Residual rows for a batch: (e*_prev - M c) at the requested rows only.
/// The candidate must live on the full collocation grid; `rows` must index
/// into it.
pub fn residual_rows(
    matrix: &OperatorMatrix,
    prev_residual: &[C64],
    candidate: &[C64],
    rows: &[usize],
) -> Result<Vec<C64>> {
    if candidate.len() != matrix.n() || prev_residual.len() != matrix.n() {
        return Err(Error::GridMismatch(format!(
            "matrix order {} vs residual {} and candidate {}",
            matrix.n(),
            prev_residual.len(),
            candidate.len()
        )));
    }
    let mc = matrix.entries().matvec_rows(rows, candidate);
    Ok(rows
        .iter()
        .zip(&mc)
        .map(|(&j, &v)| prev_residual[j] - v)
        .collect())
}

/// Complexify a two-column head output: c_j = out[j,0] + i out[j,1].
fn complexify(out: &RMat) -> Vec<C64> {
    debug_assert_eq!(out.cols(), OUTPUT_DIM);
    (0..out.rows())
        .map(|j| C64::new(out.at(j, 0), out.at(j, 1)))
        .collect()
}

/// Exact least-squares head coefficients for given features: minimizes
/// ||e*_prev - A z||_2 over z in C^(w+1), where A = M [H | 1] maps complex
/// head coefficients (the complexified weight row pairs plus bias) through
/// the operator matrix. Unconstrained complex coefficients are exactly
/// equivalent to the real head parameters, so this is the true optimum of
/// the grade's loss over its head; rank deficiency resolves to the
/// minimum-norm solution.
pub fn refit_head(
    matrix: &OperatorMatrix,
    features: &RMat,
    prev_residual: &[C64],
) -> Result<Vec<C64>> {
    let n = matrix.n();
    if features.rows() != n || prev_residual.len() != n {
        return Err(Error::GridMismatch(format!(
            "matrix order {} vs features {} rows and residual {}",
            n,
            features.rows(),
            prev_residual.len()
        )));
    }
    let w = features.cols();
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(w + 1);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for k in 0..w {
        for (j, b) in buf.iter_mut().enumerate() {
            *b = C64::new(features.at(j, k), 0.0);
        }
        cols.push(matrix.entries().matvec(&buf));
    }
    buf.fill(C64::new(1.0, 0.0));
    cols.push(matrix.entries().matvec(&buf));
    let a = CMat::from_fn(n, w + 1, |i, k| cols[k][i]);
    Ok(lstsq_min_norm(&a, prev_residual))
}

/// Write complex head coefficients into a network's output layer:
/// z_k -> (Re z_k, Im z_k) weight rows, z_w -> bias.
fn write_head(params: &mut NetParams, z: &[C64]) {
    let shapes = params.arch().layer_shapes();
    let (out, inp) = shapes[shapes.len() - 1];
    debug_assert_eq!(out, OUTPUT_DIM);
    debug_assert_eq!(z.len(), inp + 1);
    let h0 = params.head_offset();
    let flat = params.flat_mut();
    for k in 0..inp {
        flat[h0 + k] = z[k].re;
        flat[h0 + inp + k] = z[k].im;
    }
    flat[h0 + 2 * inp] = z[inp].re;
    flat[h0 + 2 * inp + 1] = z[inp].im;
}

/// Train one grade on the current residual and push its record onto the
/// stack. `hidden` lists the grade's own hidden widths (one entry for
/// multi-grade runs; the full depth for the single-grade baseline).
///
/// The head starts at zero, so an untrained grade is exactly inert: with
/// zero epochs and no refit the residual is unchanged bit for bit. Each
/// Adam step evaluates the network on the full grid (the operator couples
/// all columns), takes the loss over the shuffled batch rows, and updates
/// with the geometric learning-rate schedule. After the epochs, the exact
/// head refit (if enabled) replaces the head with the least-squares
/// optimum, which makes residual semi-norms non-increasing across grades.
pub fn train_grade(
    stack: &mut GradeStack,
    hidden: &[usize],
    epochs: usize,
    train: &TrainConfig,
    omega0: f64,
    refit: bool,
) -> Result<()> {
    train.validate()?;
    let started = Instant::now();
    let matrix = &stack.ctx.matrix;
    let n = matrix.n();
    let grade = stack.records.len() + 1;
    let input_width = stack.feats_train.as_ref().map_or(1, RMat::cols);
    let arch = Architecture {
        input_dim: input_width,
        hidden: hidden.to_vec(),
    };

    // Per-grade randomness: stream 2g seeds the parameter draw, stream
    // 2g+1 drives the batch shuffles. Both derive from the run seed alone.
    let mut seeder = ChaCha12Rng::seed_from_u64(train.seed);
    seeder.set_stream(2 * grade as u64);
    let init_seed: u64 = seeder.gen();
    let mut params = init_params(&arch, init_seed, omega0)?;
    let head = params.head_offset();
    for p in &mut params.flat_mut()[head..] {
        *p = 0.0;
    }
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(train.seed);
    shuffle_rng.set_stream(2 * grade as u64 + 1);

    let batch = train.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let schedule = LrSchedule {
        lr_initial: train.lr_initial,
        lr_final: train.lr_final,
        total_steps: (epochs * steps_per_epoch) as u64,
    };
    let mut adam = AdamState::new(params.flat().len());
    let mut indices: Vec<usize> = (0..n).collect();
    let mut epoch_train_loss = Vec::with_capacity(epochs);
    let mut epoch_val_loss = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        indices.shuffle(&mut shuffle_rng);
        for (step, rows) in indices.chunks(batch).enumerate() {
            let fwd = forward(&params, stack.train_input(), true);
            let c = complexify(&fwd.out);
            let mc = matrix.entries().matvec_rows(rows, &c);
            let r: Vec<C64> = rows
                .iter()
                .zip(&mc)
                .map(|(&j, &v)| stack.residual[j] - v)
                .collect();
            let loss = sum_sq_magnitudes(&r) / r.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { grade, epoch, step });
            }
            // d loss / d c_l = -(2/B) conj(t_l), t_l = sum_j M[j,l] conj(r_j):
            // in head coordinates (u, v) with c = u + iv that is
            // du_l = -(2/B) Re t_l, dv_l = +(2/B) Im t_l, over all N rows.
            let conj_r: Vec<C64> = r.iter().map(C64::conj).collect();
            let t = matrix.entries().rows_weighted_columns(rows, &conj_r);
            let scale = 2.0 / r.len() as f64;
            let mut dout = RMat::zeros(n, OUTPUT_DIM);
            for (l, tv) in t.iter().enumerate() {
                dout.set(l, 0, -scale * tv.re);
                dout.set(l, 1, scale * tv.im);
            }
            let grad = backward(&params, stack.train_input(), &fwd, &dout);
            let lr = schedule.at(adam.step_count());
            adam_step(&mut adam, params.flat_mut(), &grad, lr, train);
        }
        // End-of-epoch diagnostics on the full grid and validation points.
        let fwd = forward(&params, stack.train_input(), false);
        let c = complexify(&fwd.out);
        let e_cand = stack.candidate_residual(&c);
        let train_now = sum_sq_magnitudes(&e_cand) / n as f64;
        let fwd_val = forward(&params, stack.val_input(), false);
        let val_now = stack.validation_loss(&c, &complexify(&fwd_val.out))?;
        if !(train_now.is_finite() && val_now.is_finite()) {
            return Err(Error::NonFiniteLoss {
                grade,
                epoch,
                step: steps_per_epoch,
            });
        }
        epoch_train_loss.push(train_now);
        epoch_val_loss.push(val_now);
    }

    if refit {
        let fwd = forward(&params, stack.train_input(), false);
        let z = refit_head(matrix, fwd.feature(), &stack.residual)?;
        write_head(&mut params, &z);
    }

    // Final state, evaluated through the same forward path replay uses.
    let fwd = forward(&params, stack.train_input(), false);
    let c = complexify(&fwd.out);
    let e_new = stack.candidate_residual(&c);
    let train_loss = sum_sq_magnitudes(&e_new) / n as f64;
    let residual_norm = train_loss.sqrt();
    let fwd_val = forward(&params, stack.val_input(), false);
    let c_val = complexify(&fwd_val.out);
    let val_loss = stack.validation_loss(&c, &c_val)?;
    if !(train_loss.is_finite() && val_loss.is_finite()) {
        return Err(Error::NonFiniteLoss {
            grade,
            epoch: epochs,
            step: 0,
        });
    }

    for (a, &cv) in stack.accum_train.iter_mut().zip(&c) {
        *a += cv;
    }
    for (a, &cv) in stack.accum_val.iter_mut().zip(&c_val) {
        *a += cv;
    }
    stack.residual = e_new;
    stack.feats_train = Some(
        fwd.hidden
            .into_iter()
            .next_back()
            .expect("at least one hidden layer"),
    );
    stack.feats_val = Some(
        fwd_val
            .hidden
            .into_iter()
            .next_back()
            .expect("at least one hidden layer"),
    );
    stack.records.push(GradeRecord {
        grade,
        params,
        omega0,
        init_seed,
        frozen: false,
        train_loss,
        val_loss,
        residual_norm,
        wall_seconds: started.elapsed().as_secs_f64(),
        relative_error: None,
        epoch_train_loss,
        epoch_val_loss,
    });
    Ok(())
}

/// Adaptive multi-grade training: trains grades until a stopping rule
/// fires, `max_grades` is reached, or a grade fails. The full per-grade
/// history is returned; `selected` marks how many leading grades form the
/// returned solution (a plateau selects the grade before the one that
/// triggered it). Grade failures (non-finite loss) stop the run and keep
/// the completed grades; other errors propagate.
pub fn run_amgdl(ctx: &SolveContext, cfg: &AmgdlConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let threshold = if cfg.stopping == StoppingRule::Tolerance {
        let eps = cfg.tolerance.expect("validated");
        let inv = inverse_norm_estimate(&ctx.matrix)?;
        Some(eps / (2.0 * inv.value))
    } else {
        None
    };
    let mut stack = GradeStack::new(ctx);
    let mut stop: Option<StopReason> = None;
    let mut selected: Option<usize> = None;

    for grade in 1..=cfg.max_grades {
        if let Some(last) = stack.records.last_mut() {
            last.frozen = true;
        }
        let omega0 = if grade == 1 { cfg.omega0 } else { 1.0 };
        let width = cfg.width_of(grade);
        let epochs = cfg.epochs_of(grade);
        match train_grade(&mut stack, &[width], epochs, &cfg.train, omega0, cfg.refit_last_layer) {
            Ok(()) => {}
            Err(Error::NonFiniteLoss { grade, epoch, step }) => {
                stop = Some(StopReason::GradeFailed {
                    grade,
                    message: format!("non-finite loss at epoch {epoch}, step {step}"),
                });
                break;
            }
            Err(e) => return Err(e),
        }
        if grade < cfg.min_grades {
            continue;
        }
        let records = stack.records();
        match cfg.stopping {
            StoppingRule::Tolerance => {
                if records[grade - 1].residual_norm <= threshold.expect("tolerance mode") {
                    stop = Some(StopReason::ToleranceMet);
                    selected = Some(grade);
                    break;
                }
            }
            StoppingRule::ValidationPlateau if grade >= 2 => {
                if records[grade - 1].val_loss >= records[grade - 2].val_loss {
                    stop = Some(StopReason::ValidationPlateau);
                    selected = Some(grade - 1);
                    break;
                }
            }
            StoppingRule::TrainPlateau if grade >= 2 => {
                if records[grade - 1].residual_norm >= records[grade - 2].residual_norm {
                    stop = Some(StopReason::TrainPlateau);
                    selected = Some(grade - 1);
                    break;
                }
            }
            _ => {}
        }
    }

    let mut records = stack.records;
    let stop = stop.unwrap_or(StopReason::MaxGrades);
    let selected = selected.unwrap_or(records.len());
    attach_relative_errors(ctx, &mut records)?;
    Ok(TrainingRun {
        mode: RunMode::Amgdl,
        seed: cfg.train.seed,
        records,
        stop,
        selected,
    })
}

/// Single-grade baseline: one network of the given hidden depths trained
/// once on the same loss, no refit. A depth-1 baseline coincides exactly
/// (bit for bit) with a one-grade multi-grade run with refit disabled.
pub fn run_sgdl(
    ctx: &SolveContext,
    hidden: &[usize],
    train: &TrainConfig,
    omega0: f64,
) -> Result<TrainingRun> {
    let mut stack = GradeStack::new(ctx);
    let stop = match train_grade(&mut stack, hidden, train.epochs, train, omega0, false) {
        Ok(()) => StopReason::MaxGrades,
        Err(Error::NonFiniteLoss { grade, epoch, step }) => StopReason::GradeFailed {
            grade,
            message: format!("non-finite loss at epoch {epoch}, step {step}"),
        },
        Err(e) => return Err(e),
    };
    let mut records = stack.records;
    let selected = records.len();
    attach_relative_errors(ctx, &mut records)?;
    Ok(TrainingRun {
        mode: RunMode::Sgdl,
        seed: train.seed,
        records,
        stop,
        selected,
    })
}

/// Accumulated approximation after each grade, evaluated at arbitrary
/// nodes by replaying the feature pipeline (grade 1 reads coordinates,
/// grade l reads grade l-1's features).
pub fn replay_solution(records: &[GradeRecord], nodes: &[f64]) -> Vec<Vec<C64>> {
    let mut input = RMat::column(nodes);
    let mut accum = vec![C64::new(0.0, 0.0); nodes.len()];
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        let fwd = forward(&rec.params, &input, false);
        for (a, &cv) in accum.iter_mut().zip(&complexify(&fwd.out)) {
            *a += cv;
        }
        out.push(accum.clone());
        input = fwd
            .hidden
            .into_iter()
            .next_back()
            .expect("at least one hidden layer");
    }
    out
}

/// Fill per-grade relative errors against the exact solution on the
/// reporting grid; a problem without an exact solution leaves them None.
fn attach_relative_errors(ctx: &SolveContext, records: &mut [GradeRecord]) -> Result<()> {
    if !ctx.op.problem().exact.is_some() {
        return Ok(());
    }
    let nodes = uniform_grid(ERROR_GRID_SUBINTERVALS);
    let exact = eval_exact(
        ctx.op.problem(),
        format!("uniform:l={ERROR_GRID_SUBINTERVALS}"),
        nodes.clone(),
    )?;
    let per_grade = replay_solution(records, &nodes);
    for (rec, accum) in records.iter_mut().zip(per_grade) {
        rec.relative_error = Some(relative_l2_error(&exact.values, &accum)?);
    }
    Ok(())
}
