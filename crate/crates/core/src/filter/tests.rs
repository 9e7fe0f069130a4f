use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use super::*;
use crate::model::simulate;

fn scalar_model(sigma: f64, nu: f64) -> StateSpaceModel {
    StateSpaceModel::new(
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![0.5],
        vec![sigma],
        vec![nu],
        dvector![0.0],
        dmatrix![1.0],
    )
    .unwrap()
}

#[test]
fn r_limit_at_zero_residual() {
    let model = scalar_model(1.0, 3.0);
    let r = adaptive_r(&model, &dvector![2.0], &dvector![2.0], NoiseAdaptation::LogMatch).unwrap();
    assert!((r[0] - 0.75).abs() < 1e-15);
}

#[test]
fn r_is_continuous_across_the_switch() {
    let model = scalar_model(1.0, 3.0);
    let below = adaptive_r(&model, &dvector![0.0], &dvector![0.9e-8], NoiseAdaptation::LogMatch).unwrap()[0];
    let above = adaptive_r(&model, &dvector![0.0], &dvector![1.1e-8], NoiseAdaptation::LogMatch).unwrap()[0];
    assert!((below - above).abs() < 1e-12);
}

#[test]
fn inverse_weight_mode() {
    let model = scalar_model(2.0, 3.0);
    let r = adaptive_r(&model, &dvector![1.0], &dvector![3.0], NoiseAdaptation::InverseWeight).unwrap();
    assert!((r[0] - (3.0 * 4.0 + 4.0) / 4.0).abs() < 1e-14);
}

#[test]
fn r_grows_with_the_residual() {
    let model = scalar_model(1.0, 3.0);
    let small = adaptive_r(&model, &dvector![0.0], &dvector![0.5], NoiseAdaptation::LogMatch).unwrap()[0];
    let large = adaptive_r(&model, &dvector![0.0], &dvector![50.0], NoiseAdaptation::LogMatch).unwrap()[0];
    assert!(large > small);
}

#[test]
fn scalar_covariance_update() {
    let upd = covariance_update(&dmatrix![2.0], &dmatrix![1.0], &dmatrix![2.0]).unwrap();
    assert!((upd.gain[(0, 0)] - 0.5).abs() < 1e-15);
    assert!((upd.cov[(0, 0)] - 1.0).abs() < 1e-15);
}

#[test]
fn singular_innovation() {
    let err = covariance_update(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![0.0]).unwrap_err();
    assert!(matches!(err, Error::SingularInnovation));
}

#[test]
fn predict_rotates_covariance() {
    let model = StateSpaceModel::new(
        dmatrix![0.0, 1.0; -1.0, 0.0],
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 2),
        vec![1.0; 2],
        vec![3.0; 2],
        DVector::zeros(2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let post = GaussianBelief::new(dvector![1.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]).unwrap();
    let prior = predict(&model, &post);
    assert_eq!(prior.mean, dvector![0.0, -1.0]);
    assert_eq!(prior.cov, dmatrix![1.0, 0.0; 0.0, 4.0]);
}

#[test]
fn ridge_only_when_ill_conditioned() {
    let w = prior_precision(&dmatrix![2.0, 0.0; 0.0, 4.0]).unwrap();
    assert!((w[(0, 0)] - 0.5).abs() < 1e-15);
    let w = prior_precision(&dmatrix![1.0, 0.0; 0.0, 0.0]).unwrap();
    assert!(w[(1, 1)].is_finite() && w[(1, 1)] > 1e9);
    let w = prior_precision(&DMatrix::zeros(2, 2)).unwrap();
    assert!((w[(0, 0)] - 1e10).abs() < 1.0);
}

#[test]
fn mm_update_moves_towards_measurement() {
    let model = scalar_model(1.0, 3.0);
    let prior = GaussianBelief::initial(&model);
    let out = mm_update(&model, &prior, &dvector![1.0], &FilterConfig::default()).unwrap();
    assert!(out.x[0] > 0.0 && out.x[0] < 1.0);
    assert!(out.converged);
}

#[test]
fn run_filter_reports_steps() {
    let model = scalar_model(1.0, 3.0);
    let traj = simulate(&model, &model.student_t_noise(), 15, 3).unwrap();
    let trace = run_filter(&model, &FilterConfig::default(), &traj.measurements).unwrap();
    assert_eq!(trace.len(), 15);
    assert_eq!(trace.descent_violations(1e-12), 0);
    assert!(trace.steps.iter().all(|s| s.mm_iters >= 1 && s.g_max == f64::NEG_INFINITY));
}

#[test]
fn empty_measurements_rejected() {
    let model = scalar_model(1.0, 3.0);
    assert!(run_filter(&model, &FilterConfig::default(), &[]).is_err());
}

#[test]
fn wrong_measurement_length_names_the_step() {
    let model = scalar_model(1.0, 3.0);
    let ys = vec![dvector![0.0], dvector![0.0, 1.0]];
    let err = run_filter(&model, &FilterConfig::default(), &ys).unwrap_err();
    assert!(matches!(err, Error::Step { step: 2, .. }));
}

#[test]
fn constrained_run_stays_in_halfspace() {
    let model = scalar_model(1.0, 3.0);
    let cfg = FilterConfig::constrained(
        SurrogateKind::Log,
        vec![Constraint::linear_ineq(dvector![1.0], -1.0).unwrap()],
    );
    let traj = simulate(&model, &model.student_t_noise(), 20, 5).unwrap();
    let trace = run_filter(&model, &cfg, &traj.measurements).unwrap();
    assert!(trace.worst_constraint_value() <= FEASIBILITY_TOL);
}

#[test]
fn trace_csv_header() {
    let model = scalar_model(1.0, 3.0);
    let traj = simulate(&model, &model.student_t_noise(), 3, 1).unwrap();
    let trace = run_filter(&model, &FilterConfig::default(), &traj.measurements).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,xhat_1,P_diag_1,mm_iters,F_final,r_1,wall_ns,g_resid_max");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn config_defaults_from_empty_json() {
    let cfg: FilterConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(cfg, FilterConfig::default());
}

#[test]
fn particle_filter_needs_enough_particles() {
    let model = scalar_model(1.0, 3.0);
    assert!(particle_filter_oracle(&model, &[dvector![0.0]], 10, 0).is_err());
}
