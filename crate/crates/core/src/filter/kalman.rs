use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{covariance_update, predict, FilterTrace, GaussianBelief, StepRecord};
use crate::error::{dim_check, Result};
use crate::linalg::check_psd;
use crate::model::StateSpaceModel;

/// Standard Kalman filter with fixed measurement covariance `r`.
pub fn kalman_baseline(model: &StateSpaceModel, r: &DMatrix<f64>, measurements: &[DVector<f64>]) -> Result<FilterTrace> {
    dim_check("rows(R)", model.n_y(), r.nrows())?;
    dim_check("cols(R)", model.n_y(), r.ncols())?;
    check_psd("R", r, 1e-12)?;
    let run_start = Instant::now();
    let r_diag = r.diagonal();
    let mut belief = GaussianBelief::initial(model);
    let mut steps = Vec::with_capacity(measurements.len());
    for (k, y) in measurements.iter().enumerate() {
        let started = Instant::now();
        let step = (|| {
            dim_check("len(y)", model.n_y(), y.len())?;
            let prior = if k == 0 { belief.clone() } else { predict(model, &belief) };
            let upd = covariance_update(&prior.cov, model.c(), r)?;
            let innovation = y - model.c() * &prior.mean;
            Ok(GaussianBelief {
                mean: &prior.mean + &upd.gain * innovation,
                cov: upd.cov,
            })
        })()
        .map_err(|e: crate::Error| e.at_step(k + 1))?;
        belief = step.clone();
        steps.push(StepRecord::plain(step, r_diag.clone(), started.elapsed().as_nanos() as u64));
    }
    Ok(FilterTrace {
        steps,
        total_ns: run_start.elapsed().as_nanos() as u64,
    })
}
