use log::{info, warn};
use mmfilter::filter::{kalman_baseline, particle_filter_oracle, projection_baseline, run_filter, FilterTrace};
use mmfilter::model::Trajectory;
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{BenchError, Result};
use crate::metrics::{mean, median, rmse, std_dev};
use crate::spec::{ExperimentSpec, FilterKind, FilterSpec};
use crate::truth::generate;

/// Slack of the MM descent check `F(xᵗ⁺¹) ≤ F(xᵗ) + slack`.
pub const DESCENT_SLACK: f64 = 1e-12;

/// Largest fraction of failed runs an experiment tolerates.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

const PARTICLE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One filter on one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// One value per RMSE group of the experiment.
    pub rmse: Vec<f64>,
    pub wall_ns: u64,
    pub mm_iters: Vec<usize>,
    pub descent_violations: usize,
    /// Largest constraint value over the run; `-inf` without constraints.
    pub worst_constraint: f64,
    pub estimates: Option<Vec<DVector<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub seed: u64,
    /// In the order of the experiment's filter list.
    pub filters: Vec<FilterRun>,
    /// Kept for the first run only, for plot data.
    pub trajectory: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub name: String,
    /// One value per successful run.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub label: String,
    pub groups: Vec<GroupStats>,
    pub mean_cpu_s: f64,
    pub median_mm_iters: f64,
    pub descent_violations: usize,
    pub worst_constraint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub runs: Vec<RunResult>,
    /// `(run index, error message)` of excluded runs.
    pub failed: Vec<(usize, String)>,
    pub filters: Vec<FilterSummary>,
}

impl Report {
    pub fn filter(&self, label: &str) -> Option<&FilterSummary> {
        self.filters.iter().find(|f| f.label == label)
    }
}

impl FilterSummary {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Seed of run `i`. Every filter of a run sees the same data.
pub fn run_seed(spec: &ExperimentSpec, i: usize) -> u64 {
    spec.base_seed.wrapping_add(i as u64)
}

/// Runs one filter over `measurements`.
pub fn run_filter_spec(
    spec: &ExperimentSpec,
    f: &FilterSpec,
    measurements: &[DVector<f64>],
    seed: u64,
) -> mmfilter::Result<FilterTrace> {
    let model = &spec.model;
    let trace = match &f.kind {
        FilterKind::Tfmm { surrogate, constrained } => {
            run_filter(model, &spec.filter_config(*surrogate, *constrained), measurements)?
        }
        FilterKind::Kalman { r_diag } => kalman_baseline(model, &spec.kalman_r(r_diag.as_deref()), measurements)?,
        FilterKind::Projection { surrogate } => {
            projection_baseline(model, &spec.filter_config(*surrogate, true), measurements)?
        }
        FilterKind::Particle { n_particles } => {
            particle_filter_oracle(model, measurements, *n_particles, seed ^ PARTICLE_SEED_SALT)?
        }
    };
    Ok(trace)
}

/// Generates run `i` and applies every filter to it.
pub fn run_once(spec: &ExperimentSpec, i: usize, keep_estimates: bool) -> Result<RunResult> {
    let seed = run_seed(spec, i);
    let traj = generate(spec, seed)?;
    let mut filters = Vec::with_capacity(spec.filters.len());
    for f in &spec.filters {
        let trace = run_filter_spec(spec, f, &traj.measurements, seed).map_err(|source| BenchError::FilterRun {
            label: f.label.clone(),
            source,
        })?;
        let estimates = trace.estimates();
        let rmse = spec
            .rmse_groups
            .iter()
            .map(|g| rmse(&estimates, &traj.states, g.indices.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        filters.push(FilterRun {
            rmse,
            wall_ns: trace.total_ns,
            mm_iters: trace.mm_iterations(),
            descent_violations: trace.descent_violations(DESCENT_SLACK),
            worst_constraint: trace.worst_constraint_value(),
            estimates: keep_estimates.then_some(estimates),
        });
    }
    Ok(RunResult {
        run: i,
        seed,
        filters,
        trajectory: keep_estimates.then_some(traj),
    })
}

/// Runs all `spec.n_runs` runs on `parallelism` threads and aggregates them.
///
/// Failed runs are logged and excluded from every filter's statistics. More
/// than 5% failed runs is an error.
pub fn run_experiment(spec: &ExperimentSpec, parallelism: usize) -> Result<Report> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    info!("{}: {} runs of {} steps on {} threads", spec.name, spec.n_runs, spec.steps, parallelism.max(1));
    let outcomes: Vec<Result<RunResult>> =
        pool.install(|| (0..spec.n_runs).into_par_iter().map(|i| run_once(spec, i, i == 0)).collect());

    let mut runs = Vec::with_capacity(spec.n_runs);
    let mut failed = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => runs.push(r),
            Err(e) => {
                warn!("run {i} (seed {}) failed: {e}", run_seed(spec, i));
                failed.push((i, e.to_string()));
            }
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * spec.n_runs as f64 {
        return Err(BenchError::TooManyFailures {
            failed: failed.len(),
            total: spec.n_runs,
        });
    }
    let filters = summarize(spec, &runs);
    Ok(Report {
        name: spec.name.clone(),
        runs,
        failed,
        filters,
    })
}

fn summarize(spec: &ExperimentSpec, runs: &[RunResult]) -> Vec<FilterSummary> {
    spec.filters
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let groups = spec
                .rmse_groups
                .iter()
                .enumerate()
                .map(|(g, group)| {
                    let values: Vec<f64> = runs.iter().map(|r| r.filters[j].rmse[g]).collect();
                    GroupStats {
                        name: group.name.clone(),
                        mean: mean(&values),
                        std_dev: std_dev(&values),
                        values,
                    }
                })
                .collect();
            let cpu: Vec<f64> = runs.iter().map(|r| r.filters[j].wall_ns as f64 * 1e-9).collect();
            let iters: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.filters[j].mm_iters.iter().map(|&n| n as f64))
                .collect();
            FilterSummary {
                label: f.label.clone(),
                groups,
                mean_cpu_s: mean(&cpu),
                median_mm_iters: median(&iters),
                descent_violations: runs.iter().map(|r| r.filters[j].descent_violations).sum(),
                worst_constraint: runs
                    .iter()
                    .map(|r| r.filters[j].worst_constraint)
                    .fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}
