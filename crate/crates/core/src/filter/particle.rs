use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FilterTrace, GaussianBelief, StepRecord};
use crate::error::{dim_check, Error, Result};
use crate::linalg::psd_sqrt;
use crate::model::{rng_from_seed, student_t_log_norm, StateSpaceModel};

/// Smallest particle count accepted.
pub const MIN_PARTICLES: usize = 100;

/// Bootstrap particle filter with Student-t likelihood and systematic
/// resampling at every step.
///
/// Used as a slow reference for the posterior mean.
pub fn particle_filter_oracle(
    model: &StateSpaceModel,
    measurements: &[DVector<f64>],
    n_particles: usize,
    seed: u64,
) -> Result<FilterTrace> {
    if n_particles < MIN_PARTICLES {
        return Err(Error::Parameter(format!(
            "at least {MIN_PARTICLES} particles are required, got {n_particles}"
        )));
    }
    let run_start = Instant::now();
    let n = model.n_x();
    let n_y = model.n_y();
    let mut rng = rng_from_seed(seed);
    let a = model.a();
    let c = model.c();
    let q_sqrt = psd_sqrt(model.q());
    let p0_sqrt = psd_sqrt(model.p0());
    let sigma = model.sigma();
    let nu = model.nu();
    let log_norm: Vec<f64> = (0..n_y).map(|i| student_t_log_norm(sigma[i], nu[i])).collect();
    let r_diag = DVector::from_iterator(
        n_y,
        (0..n_y).map(|i| if nu[i] > 2.0 { nu[i] * sigma[i] * sigma[i] / (nu[i] - 2.0) } else { f64::INFINITY }),
    );

    // particle j occupies parts[j*n .. (j+1)*n]
    let mut parts = vec![0.0; n * n_particles];
    let mut next = vec![0.0; n * n_particles];
    let mut logw = vec![0.0; n_particles];
    let mut z = vec![0.0; n];
    for j in 0..n_particles {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let p = &mut parts[j * n..(j + 1) * n];
        for r in 0..n {
            p[r] = model.x0_mean()[r] + (0..n).map(|s| p0_sqrt[(r, s)] * z[s]).sum::<f64>();
        }
    }

    let mut steps = Vec::with_capacity(measurements.len());
    for (k, y) in measurements.iter().enumerate() {
        let started = Instant::now();
        dim_check("len(y)", n_y, y.len()).map_err(|e| e.at_step(k + 1))?;
        if k > 0 {
            for j in 0..n_particles {
                z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                let src = &parts[j * n..(j + 1) * n];
                let dst = &mut next[j * n..(j + 1) * n];
                for r in 0..n {
                    let mut v = 0.0;
                    for s in 0..n {
                        v += a[(r, s)] * src[s] + q_sqrt[(r, s)] * z[s];
                    }
                    dst[r] = v;
                }
            }
            std::mem::swap(&mut parts, &mut next);
        }

        let mut max_lw = f64::NEG_INFINITY;
        for j in 0..n_particles {
            let p = &parts[j * n..(j + 1) * n];
            let mut lw = 0.0;
            for i in 0..n_y {
                let mut pred = 0.0;
                for s in 0..n {
                    pred += c[(i, s)] * p[s];
                }
                let res = y[i] - pred;
                let u = res * res / (nu[i] * sigma[i] * sigma[i]);
                lw += log_norm[i] - 0.5 * (nu[i] + 1.0) * u.ln_1p();
            }
            logw[j] = lw;
            max_lw = max_lw.max(lw);
        }
        if !max_lw.is_finite() {
            return Err(Error::WeightCollapse.at_step(k + 1));
        }
        let mut total = 0.0;
        for lw in logw.iter_mut() {
            *lw = (*lw - max_lw).exp();
            total += *lw;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::WeightCollapse.at_step(k + 1));
        }
        let weights = &mut logw;
        weights.iter_mut().for_each(|w| *w /= total);

        let mut mean = DVector::zeros(n);
        for (j, w) in weights.iter().enumerate() {
            for r in 0..n {
                mean[r] += w * parts[j * n + r];
            }
        }
        let mut cov = DMatrix::zeros(n, n);
        for (j, w) in weights.iter().enumerate() {
            let p = &parts[j * n..(j + 1) * n];
            for r in 0..n {
                let dr = p[r] - mean[r];
                for s in 0..=r {
                    cov[(r, s)] += w * dr * (p[s] - mean[s]);
                }
            }
        }
        for r in 0..n {
            for s in 0..r {
                cov[(s, r)] = cov[(r, s)];
            }
        }

        // systematic resampling
        let step = 1.0 / n_particles as f64;
        let mut u = rng.random::<f64>() * step;
        let mut cum = weights[0];
        let mut src = 0;
        for j in 0..n_particles {
            while u > cum && src + 1 < n_particles {
                src += 1;
                cum += weights[src];
            }
            next[j * n..(j + 1) * n].copy_from_slice(&parts[src * n..(src + 1) * n]);
            u += step;
        }
        std::mem::swap(&mut parts, &mut next);

        steps.push(StepRecord::plain(
            GaussianBelief { mean, cov },
            r_diag.clone(),
            started.elapsed().as_nanos() as u64,
        ));
    }
    Ok(FilterTrace {
        steps,
        total_ns: run_start.elapsed().as_nanos() as u64,
    })
}
