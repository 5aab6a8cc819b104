//! Experiment configuration: a TOML file describing the problem, the
//! discretization, the network architecture, training hyperparameters, the
//! stopping rule, an optional hyperparameter sweep, and the seed list.
//! Unknown keys are rejected everywhere so a typo cannot silently fall back
//! to a default.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use oscidal::mgdl::{
    AmgdlConfig, StoppingRule, DEFAULT_RHS_OVERSAMPLE, DEFAULT_VAL_POINTS,
};
use oscidal::net::TrainConfig;
use oscidal::operator::QuadratureConfig;
use oscidal::problem::{Band, BandCoeff, ExactSolutionSpec, KernelSpec, ProblemSpec};
use serde::{Deserialize, Serialize};

/// Top-level experiment description, one file per experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run seeds; each sweep point is trained once per seed.
    pub seeds: Vec<u64>,
    /// Where run directories and summary tables go.
    pub output_dir: PathBuf,
    pub problem: ProblemSection,
    pub quadrature: QuadratureSection,
    pub architecture: ArchitectureSection,
    pub train: TrainSection,
    pub amgdl: AmgdlSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub validation: ValidationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kernel: KernelSection,
    pub kappa: f64,
    #[serde(default)]
    pub exact: ExactSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSection {
    /// K(s, t) = value.
    Constant { value: f64 },
    /// K(s, t) = cos(s (t + 1)).
    CosineProduct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExactSection {
    /// No manufactured solution; error reporting is unavailable.
    #[default]
    None,
    /// Ten-band smooth manufactured solution scaled to freq_scale.
    Example1 { freq_scale: f64 },
    /// Seven-band solution under the singular envelope sign(s)|s|^eps ln|s|.
    Example2 { eps: f64, freq_scale: f64 },
    /// Explicit band list c(s) e^{i freq s}.
    Bands { bands: Vec<BandSection> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    /// Coefficient function by its stable name (e.g. "one", "exp",
    /// "sin-linear").
    pub coeff: String,
    /// Angular frequency of the band's oscillation.
    pub freq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    pub cap_gamma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: usize,
}

fn default_equal_width() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArchitectureSection {
    /// Every grade gets the same hidden width.
    EqualWidth {
        #[serde(default = "default_equal_width")]
        width: usize,
    },
    /// Grade j gets width 200 + 100 * ceil(j / 2).
    VaryingWidth,
    /// Explicit per-grade widths; the last entry repeats for deeper grades.
    Explicit { widths: Vec<usize> },
}

fn default_lr_final() -> f64 {
    1e-7
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-8
}

/// Training hyperparameters. The seed is not a config field: it comes from
/// the top-level seed list, one run per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
}

fn default_min_grades() -> usize {
    1
}
fn default_stopping() -> StoppingRule {
    StoppingRule::ValidationPlateau
}
fn default_refit() -> bool {
    true
}
fn default_omega0() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmgdlSection {
    pub max_grades: usize,
    #[serde(default = "default_min_grades")]
    pub min_grades: usize,
    #[serde(default = "default_stopping")]
    pub stopping: StoppingRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grade_epochs: Option<Vec<usize>>,
    #[serde(default = "default_refit")]
    pub refit_last_layer: bool,
    #[serde(default = "default_omega0")]
    pub omega0: f64,
}

/// Optional hyperparameter sweep: the cartesian product of the listed
/// batch sizes and initial learning rates, each trained on every seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_initial: Option<Vec<f64>>,
}

fn default_val_points() -> usize {
    DEFAULT_VAL_POINTS
}
fn default_val_seed() -> u64 {
    9
}
fn default_rhs_oversample() -> usize {
    DEFAULT_RHS_OVERSAMPLE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    #[serde(default = "default_val_points")]
    pub points: usize,
    #[serde(default = "default_val_seed")]
    pub seed: u64,
    #[serde(default = "default_rhs_oversample")]
    pub rhs_oversample: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection {
            points: default_val_points(),
            seed: default_val_seed(),
            rhs_oversample: default_rhs_oversample(),
        }
    }
}

/// One point of the sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub batch_size: usize,
    pub lr_initial: f64,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    /// Config-level validation; numeric constraints on the resolved library
    /// types are revalidated by the library itself at run time.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            bail!("seeds must be distinct");
        }
        if let ExactSection::Bands { bands } = &self.problem.exact {
            if bands.is_empty() {
                bail!("exact.bands must list at least one band");
            }
            for b in bands {
                if BandCoeff::from_id(&b.coeff).is_none() {
                    bail!("unknown band coefficient {:?}", b.coeff);
                }
            }
        }
        if let ArchitectureSection::Explicit { widths } = &self.architecture {
            if widths.is_empty() || widths.contains(&0) {
                bail!("architecture.widths must be nonempty and positive");
            }
        }
        if let ArchitectureSection::EqualWidth { width: 0 } = self.architecture {
            bail!("architecture.width must be positive");
        }
        if let Some(sweep) = &self.sweep {
            if matches!(&sweep.batch_size, Some(v) if v.is_empty() || v.contains(&0)) {
                bail!("sweep.batch_size must be nonempty and positive");
            }
            if matches!(&sweep.lr_initial, Some(v) if v.is_empty()) {
                bail!("sweep.lr_initial must be nonempty");
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let kernel = match &self.problem.kernel {
            KernelSection::Constant { value } => KernelSpec::Constant(*value),
            KernelSection::CosineProduct => KernelSpec::CosineProduct,
        };
        let exact = match &self.problem.exact {
            ExactSection::None => ExactSolutionSpec::None,
            ExactSection::Example1 { freq_scale } => ExactSolutionSpec::Example1 {
                freq_scale: *freq_scale,
            },
            ExactSection::Example2 { eps, freq_scale } => ExactSolutionSpec::Example2 {
                eps: *eps,
                freq_scale: *freq_scale,
            },
            ExactSection::Bands { bands } => ExactSolutionSpec::Bands(
                bands
                    .iter()
                    .map(|b| {
                        BandCoeff::from_id(&b.coeff)
                            .map(|coeff| Band {
                                coeff,
                                freq: b.freq,
                            })
                            .with_context(|| format!("unknown band coefficient {:?}", b.coeff))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(ProblemSpec::new(kernel, self.problem.kappa, exact)?)
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        QuadratureConfig {
            cap_gamma: self.quadrature.cap_gamma,
            beta: self.quadrature.beta,
            gamma: self.quadrature.gamma,
            q: self.quadrature.q,
        }
    }

    /// Per-grade hidden widths, resolved to one entry per possible grade.
    pub fn grade_widths(&self) -> Vec<usize> {
        let grades = self.amgdl.max_grades.max(1);
        match &self.architecture {
            ArchitectureSection::EqualWidth { width } => vec![*width],
            ArchitectureSection::VaryingWidth => {
                (1..=grades).map(|j| 200 + 100 * j.div_ceil(2)).collect()
            }
            ArchitectureSection::Explicit { widths } => widths.clone(),
        }
    }

    /// Hidden layout of the depth-matched single-network baseline: the same
    /// widths the grades would use, stacked into one deep network.
    pub fn sgdl_hidden(&self) -> Vec<usize> {
        let widths = self.grade_widths();
        let grades = self.amgdl.max_grades.max(1);
        (1..=grades)
            .map(|g| widths[(g - 1).min(widths.len() - 1)])
            .collect()
    }

    /// Sweep grid in deterministic order: batch sizes ascending as listed,
    /// then learning rates, cartesian product. No sweep section means one
    /// point named "base" at the [train] values.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let (batches, lrs) = match &self.sweep {
            None => (None, None),
            Some(s) => (s.batch_size.clone(), s.lr_initial.clone()),
        };
        let batches = batches.unwrap_or_else(|| vec![self.train.batch_size]);
        let lrs = lrs.unwrap_or_else(|| vec![self.train.lr_initial]);
        if batches.len() == 1 && lrs.len() == 1 && self.sweep.is_none() {
            return vec![SweepPoint {
                label: "base".into(),
                batch_size: batches[0],
                lr_initial: lrs[0],
            }];
        }
        let mut points = Vec::with_capacity(batches.len() * lrs.len());
        for &batch_size in &batches {
            for &lr_initial in &lrs {
                points.push(SweepPoint {
                    label: format!("b{batch_size}-lr{lr_initial:e}"),
                    batch_size,
                    lr_initial,
                });
            }
        }
        points
    }

    pub fn train_config(&self, point: &SweepPoint, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: point.batch_size,
            lr_initial: point.lr_initial,
            lr_final: self.train.lr_final,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps_adam: self.train.eps_adam,
            seed,
        }
    }

    pub fn amgdl_config(&self, point: &SweepPoint, seed: u64) -> AmgdlConfig {
        AmgdlConfig {
            max_grades: self.amgdl.max_grades,
            min_grades: self.amgdl.min_grades,
            tolerance: self.amgdl.tolerance,
            stopping: self.amgdl.stopping,
            grade_widths: self.grade_widths(),
            grade_epochs: self.amgdl.grade_epochs.clone(),
            train: self.train_config(point, seed),
            refit_last_layer: self.amgdl.refit_last_layer,
            omega0: self.amgdl.omega0,
        }
    }

    /// The fully resolved configuration of one run: the sweep point folded
    /// into [train], a single seed, no sweep section. Written into each run
    /// directory so the run can be verified or replayed standalone.
    pub fn single_run(&self, point: &SweepPoint, seed: u64, run_dir: PathBuf) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.seeds = vec![seed];
        cfg.output_dir = run_dir;
        cfg.sweep = None;
        cfg.train.batch_size = point.batch_size;
        cfg.train.lr_initial = point.lr_initial;
        cfg
    }
}
