//! The Student-t MM filter and its baselines.
//!
//! One step of the MM filter:
//!
//! 1. predict `x̂ ← A x̂`, `P ← A P Aᵀ + Q` (skipped at `k = 1`, where the prior is `N(x̂_0, P_0)`);
//! 2. minimize the MAP objective by MM, solving a QCQP per iteration;
//! 3. compute the equivalent Gaussian measurement variances `R_k` at the estimate;
//! 4. update the covariance with the Kalman gain for `R_k`.

mod kalman;
mod mm;
mod particle;
mod projection;
mod trace;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, FEASIBILITY_TOL};
use crate::error::{dim_check, Error, Result};
use crate::linalg::{spd_inverse, symmetrize};
use crate::model::StateSpaceModel;
use crate::objective::{MapObjective, SurrogateKind};
use crate::qcqp::QcqpOptions;

pub use kalman::kalman_baseline;
pub use mm::{mm_minimize, repair_start, MmOptions, MmOutcome};
pub use particle::{particle_filter_oracle, MIN_PARTICLES};
pub use projection::{project_estimate, projection_baseline};
pub use trace::{FilterTrace, StepRecord};

/// Condition number above which a prior covariance gets a ridge before inversion.
pub const MAX_PRIOR_CONDITION: f64 = 1e12;

/// Gaussian belief `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        dim_check("rows(cov)", mean.len(), cov.nrows())?;
        dim_check("cols(cov)", mean.len(), cov.ncols())?;
        Ok(Self { mean, cov })
    }

    pub fn initial(model: &StateSpaceModel) -> Self {
        Self {
            mean: model.x0_mean().clone(),
            cov: model.p0().clone(),
        }
    }
}

/// How the equivalent Gaussian variance `r_{k,i}` is derived from the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseAdaptation {
    /// `r = w² / ((1 + ν) log(1 + w²/(σ²ν)))`, matching the log penalty at the residual `w`.
    #[default]
    LogMatch,
    /// `r = 1/m = (νσ² + w²)/(1 + ν)`, the reciprocal weight of the log surrogate.
    InverseWeight,
}

fn default_mm_tol() -> f64 {
    1e-6
}

fn default_mm_max_iter() -> usize {
    50
}

fn default_qcqp_tol() -> f64 {
    1e-8
}

fn default_qcqp_max_iter() -> usize {
    200
}

/// Settings of the MM filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default)]
    pub surrogate: SurrogateKind,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default = "default_mm_tol")]
    pub mm_tol: f64,
    #[serde(default = "default_mm_max_iter")]
    pub mm_max_iter: usize,
    #[serde(default = "default_qcqp_tol")]
    pub qcqp_tol: f64,
    #[serde(default = "default_qcqp_max_iter")]
    pub qcqp_max_iter: usize,
    #[serde(default)]
    pub noise_adaptation: NoiseAdaptation,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            surrogate: SurrogateKind::Log,
            constrained: false,
            constraints: Vec::new(),
            mm_tol: default_mm_tol(),
            mm_max_iter: default_mm_max_iter(),
            qcqp_tol: default_qcqp_tol(),
            qcqp_max_iter: default_qcqp_max_iter(),
            noise_adaptation: NoiseAdaptation::LogMatch,
        }
    }
}

impl FilterConfig {
    pub fn unconstrained(surrogate: SurrogateKind) -> Self {
        Self {
            surrogate,
            ..Self::default()
        }
    }

    pub fn constrained(surrogate: SurrogateKind, constraints: Vec<Constraint>) -> Self {
        Self {
            surrogate,
            constrained: true,
            constraints,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_x: usize) -> Result<()> {
        if !(self.mm_tol > 0.0) {
            return Err(Error::Parameter("mm_tol must be positive".into()));
        }
        if self.mm_max_iter == 0 {
            return Err(Error::Parameter("mm_max_iter must be at least 1".into()));
        }
        if !(self.qcqp_tol > 0.0) || self.qcqp_max_iter == 0 {
            return Err(Error::Parameter("qcqp tolerances must be positive".into()));
        }
        for c in &self.constraints {
            c.check_dim(n_x)?;
        }
        Ok(())
    }

    /// Constraints actually enforced.
    pub fn active_constraints(&self) -> &[Constraint] {
        if self.constrained {
            &self.constraints
        } else {
            &[]
        }
    }

    pub fn mm_options(&self) -> MmOptions {
        MmOptions {
            tol: self.mm_tol,
            max_iter: self.mm_max_iter,
            qcqp: QcqpOptions {
                tol: self.qcqp_tol,
                max_iter: self.qcqp_max_iter,
                ..QcqpOptions::default()
            },
        }
    }
}

/// `x̂ ← A x̂`, `P ← A P Aᵀ + Q`.
pub fn predict(model: &StateSpaceModel, post: &GaussianBelief) -> GaussianBelief {
    let a = model.a();
    let mean = a * &post.mean;
    let mut cov = a * &post.cov * a.transpose() + model.q();
    symmetrize(&mut cov);
    GaussianBelief { mean, cov }
}

/// `P⁻¹`, adding a ridge of `1e-10·tr(P)/n` first if `P` is nearly singular.
pub fn prior_precision(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    let ev = cov.symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    if min > 0.0 && max / min <= MAX_PRIOR_CONDITION {
        return spd_inverse(cov);
    }
    let mut ridge = 1e-10 * cov.trace() / n as f64;
    if !(ridge > 0.0) {
        // all-zero covariance: fall back to an absolute ridge
        ridge = 1e-10;
    }
    let mut reg = cov.clone();
    for i in 0..n {
        reg[(i, i)] += ridge;
    }
    spd_inverse(&reg)
}

/// MM estimate `x̂_{k|k}` for one measurement.
pub fn mm_update(
    model: &StateSpaceModel,
    prior: &GaussianBelief,
    y: &DVector<f64>,
    cfg: &FilterConfig,
) -> Result<MmOutcome> {
    dim_check("len(y)", model.n_y(), y.len())?;
    let precision = prior_precision(&prior.cov)?;
    let objective = MapObjective::new(&prior.mean, &precision, model.c(), y, model.sigma(), model.nu())?
        .with_surrogate(cfg.surrogate);
    mm_minimize(&objective, cfg.active_constraints(), &prior.mean, &cfg.mm_options())
}

/// Residual below which `r` takes its analytic limit `σ²ν/(1 + ν)`.
const R_LIMIT_RATIO: f64 = 1e-8;

/// Equivalent Gaussian measurement variances at the estimate `x_hat`.
pub fn adaptive_r(
    model: &StateSpaceModel,
    x_hat: &DVector<f64>,
    y: &DVector<f64>,
    mode: NoiseAdaptation,
) -> Result<DVector<f64>> {
    dim_check("len(x_hat)", model.n_x(), x_hat.len())?;
    dim_check("len(y)", model.n_y(), y.len())?;
    let c = model.c();
    Ok(DVector::from_iterator(
        model.n_y(),
        (0..model.n_y()).map(|i| {
            let w = c.row(i).transpose().dot(x_hat) - y[i];
            let (sigma, nu) = (model.sigma()[i], model.nu()[i]);
            let s2 = sigma * sigma;
            match mode {
                NoiseAdaptation::LogMatch => {
                    if w.abs() < R_LIMIT_RATIO * sigma {
                        s2 * nu / (1.0 + nu)
                    } else {
                        w * w / ((1.0 + nu) * (w * w / (s2 * nu)).ln_1p())
                    }
                }
                NoiseAdaptation::InverseWeight => (nu * s2 + w * w) / (1.0 + nu),
            }
        }),
    ))
}

/// Kalman gain and updated covariance for measurement covariance `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceUpdate {
    pub gain: DMatrix<f64>,
    pub cov: DMatrix<f64>,
}

/// `K = P Cᵀ (C P Cᵀ + R)⁻¹`, `P ← P − K C P`.
pub fn covariance_update(prior_cov: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<CovarianceUpdate> {
    dim_check("cols(C)", prior_cov.nrows(), c.ncols())?;
    dim_check("rows(R)", c.nrows(), r.nrows())?;
    let pct = prior_cov * c.transpose();
    let mut s = c * &pct + r;
    symmetrize(&mut s);
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    // K = P Cᵀ S⁻¹  ⇔  Kᵀ = S⁻¹ C P
    let gain = chol.solve(&pct.transpose()).transpose();
    let mut cov = prior_cov - &gain * pct.transpose();
    symmetrize(&mut cov);
    Ok(CovarianceUpdate { gain, cov })
}

/// Largest constraint value at `x` (−∞ without constraints).
pub fn max_constraint_value(constraints: &[Constraint], x: &DVector<f64>) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for c in constraints {
        worst = worst.max(c.eval(x)?);
    }
    Ok(worst)
}

/// Slack within which a constraint is reported as active.
pub const ACTIVE_TOL: f64 = 1e-6;

/// Runs the MM filter over `measurements`.
pub fn run_filter(model: &StateSpaceModel, cfg: &FilterConfig, measurements: &[DVector<f64>]) -> Result<FilterTrace> {
    if measurements.is_empty() {
        return Err(Error::Parameter("at least one measurement is required".into()));
    }
    cfg.validate(model.n_x())?;
    let run_start = Instant::now();
    let mut belief = GaussianBelief::initial(model);
    let mut steps = Vec::with_capacity(measurements.len());
    for (k, y) in measurements.iter().enumerate() {
        let started = Instant::now();
        let result: Result<StepRecord> = (|| {
            let prior = if k == 0 { belief.clone() } else { predict(model, &belief) };
            let mm = mm_update(model, &prior, y, cfg)?;
            let r = adaptive_r(model, &mm.x, y, cfg.noise_adaptation)?;
            let update = covariance_update(&prior.cov, model.c(), &DMatrix::from_diagonal(&r))?;
            let g_max = max_constraint_value(cfg.active_constraints(), &mm.x)?;
            Ok(StepRecord {
                posterior: GaussianBelief {
                    mean: mm.x.clone(),
                    cov: update.cov,
                },
                mm_iters: mm.iterations,
                f_final: mm.f_final(),
                f_history: mm.f_history,
                r_diag: r,
                wall_ns: 0,
                g_max,
                constraint_active: g_max >= -ACTIVE_TOL,
            })
        })();
        let mut record = result.map_err(|e| e.at_step(k + 1))?;
        record.wall_ns = started.elapsed().as_nanos() as u64;
        belief = record.posterior.clone();
        steps.push(record);
    }
    Ok(FilterTrace {
        steps,
        total_ns: run_start.elapsed().as_nanos() as u64,
    })
}

/// Whether `x` satisfies every constraint within [`FEASIBILITY_TOL`].
pub fn is_feasible(constraints: &[Constraint], x: &DVector<f64>) -> Result<bool> {
    Ok(max_constraint_value(constraints, x)? <= FEASIBILITY_TOL)
}

#[cfg(test)]
mod tests;
