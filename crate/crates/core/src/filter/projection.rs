use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    max_constraint_value, mm_minimize, prior_precision, run_filter, FilterConfig, FilterTrace, MmOutcome,
    ACTIVE_TOL,
};
use crate::constraints::Constraint;
use crate::error::Result;
use crate::model::StateSpaceModel;
use crate::objective::QuadraticSurrogate;

/// `argmin (x − x̂)ᵀ W (x − x̂)` over `constraints`, by MM from `x̂`.
pub fn project_estimate(
    x_hat: &DVector<f64>,
    weight: &DMatrix<f64>,
    constraints: &[Constraint],
    cfg: &FilterConfig,
) -> Result<MmOutcome> {
    let objective = QuadraticSurrogate::new(weight * 2.0, DVector::zeros(x_hat.len()), 0.0, x_hat.clone())?;
    mm_minimize(&objective, constraints, x_hat, &cfg.mm_options())
}

/// Runs the unconstrained MM filter and projects each estimate onto the
/// constraints of `cfg` in the `P_{k|k}⁻¹` metric.
///
/// The projected estimates are not fed back into the filter.
pub fn projection_baseline(
    model: &StateSpaceModel,
    cfg: &FilterConfig,
    measurements: &[DVector<f64>],
) -> Result<FilterTrace> {
    let inner = FilterConfig {
        constrained: false,
        ..cfg.clone()
    };
    let mut trace = run_filter(model, &inner, measurements)?;
    let constraints = &cfg.constraints;
    for (k, step) in trace.steps.iter_mut().enumerate() {
        let started = Instant::now();
        let projected = (|| {
            let weight = prior_precision(&step.posterior.cov)?;
            let out = project_estimate(&step.posterior.mean, &weight, constraints, cfg)?;
            let g_max = max_constraint_value(constraints, &out.x)?;
            Ok::<_, crate::Error>((out, g_max))
        })()
        .map_err(|e| e.at_step(k + 1))?;
        let (out, g_max) = projected;
        step.posterior.mean = out.x;
        step.mm_iters += out.iterations;
        step.g_max = g_max;
        step.constraint_active = g_max >= -ACTIVE_TOL;
        let extra = started.elapsed().as_nanos() as u64;
        step.wall_ns += extra;
        trace.total_ns += extra;
    }
    Ok(trace)
}
