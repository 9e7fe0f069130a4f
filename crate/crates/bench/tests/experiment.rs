use std::collections::HashMap;

use mmfilter::constraints::Constraint;
use mmfilter_bench::metrics::rmse;
use mmfilter_bench::output::{write_report, RUNS_CSV, SUMMARY_CSV, TRAJECTORY_CSV, VELOCITY_CSV};
use mmfilter_bench::spec::FilterKind;
use mmfilter_bench::truth::{generate, TruthSpec};
use mmfilter_bench::{build_exp1, build_exp2, run_experiment, BenchError, ExperimentSpec, Report};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_exp1() -> ExperimentSpec {
    let mut spec = build_exp1();
    spec.n_runs = 4;
    spec.steps = 60;
    for f in &mut spec.filters {
        if let FilterKind::Particle { n_particles } = &mut f.kind {
            *n_particles = 300;
        }
    }
    spec
}

fn small_exp2() -> ExperimentSpec {
    let mut spec = build_exp2();
    spec.n_runs = 4;
    spec
}

/// Run index, per-filter RMSE and per-filter MM iterations.
type RunNumbers = (usize, Vec<Vec<f64>>, Vec<Vec<usize>>);

/// Everything in the report except wall-clock timings.
fn numbers(report: &Report) -> Vec<RunNumbers> {
    report
        .runs
        .iter()
        .map(|r| {
            (
                r.run,
                r.filters.iter().map(|f| f.rmse.clone()).collect(),
                r.filters.iter().map(|f| f.mm_iters.clone()).collect(),
            )
        })
        .collect()
}

#[test]
fn exp1_rotation_is_orthogonal() {
    let a = build_exp1().model.a().clone();
    assert!((a.transpose() * &a - DMatrix::identity(2, 2)).amax() < 1e-12);
}

#[test]
fn built_in_experiments_have_full_scale() {
    let e1 = build_exp1();
    assert_eq!((e1.n_runs, e1.steps, e1.filters.len()), (100, 1000, 4));
    let e2 = build_exp2();
    assert_eq!((e2.n_runs, e2.steps, e2.filters.len()), (50, 35, 3));
}

#[test]
fn config_round_trips_exactly() {
    for spec in [build_exp1(), build_exp2()] {
        let text = spec.to_json().unwrap();
        let back = ExperimentSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn config_rejects_unknown_fields() {
    let mut v: serde_json::Value = serde_json::from_str(&build_exp2().to_json().unwrap()).unwrap();
    v["stepz"] = 3.into();
    assert!(matches!(ExperimentSpec::from_json(&v.to_string()), Err(BenchError::Config(_))));
}

#[test]
fn circle_truth_geometry() {
    let spec = build_exp2();
    let traj = generate(&spec, 5).unwrap();
    assert_eq!(traj.len(), 35);
    let chord = 2.0 * 100.0 * 0.02f64.sin();
    assert!((chord - 3.999733).abs() < 1e-6);
    for (k, x) in traj.states.iter().enumerate() {
        assert!((x[0] * x[0] + x[2] * x[2] - 1e4).abs() < 1e-9);
        assert!((x[1].hypot(x[3]) - 4.0).abs() < 1e-12);
        if k > 0 {
            let prev = &traj.states[k - 1];
            let step = (x[0] - prev[0]).hypot(x[2] - prev[2]);
            assert!((step - chord).abs() < 1e-9);
        }
    }
    let TruthSpec::Circle(_) = spec.truth else { panic!("circle truth expected") };
}

#[test]
fn rmse_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let t = rng.random_range(1..40);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<DVector<f64>> {
            (0..t).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0))).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let mut acc = 0.0;
        for k in 0..t {
            for i in 0..n {
                acc += (a[k][i] - b[k][i]) * (a[k][i] - b[k][i]);
            }
        }
        let expect = (acc / t as f64).sqrt();
        assert!((rmse(&a, &b, None).unwrap() - expect).abs() <= 1e-12 * expect.max(1.0));
    }
}

#[test]
fn report_has_one_value_per_filter_and_run() {
    let spec = small_exp1();
    let report = run_experiment(&spec, 2).unwrap();
    assert_eq!(report.filters.len(), 4);
    for f in &report.filters {
        assert_eq!(f.groups[0].values.len(), spec.n_runs);
    }
    assert!(report.failed.is_empty());
}

#[test]
fn reports_are_reproducible_and_thread_count_independent() {
    let spec = small_exp2();
    let serial = run_experiment(&spec, 1).unwrap();
    let again = run_experiment(&spec, 1).unwrap();
    let parallel = run_experiment(&spec, 4).unwrap();
    assert_eq!(numbers(&serial), numbers(&again));
    assert_eq!(numbers(&serial), numbers(&parallel));
    let mut one = small_exp1();
    one.n_runs = 1;
    let a = run_experiment(&one, 1).unwrap();
    let b = run_experiment(&one, 3).unwrap();
    assert_eq!(numbers(&a), numbers(&b));
}

#[test]
fn filters_see_identical_data() {
    let mut spec = small_exp1();
    spec.filters.truncate(1);
    spec.filters.push(spec.filters[0].clone());
    spec.filters[1].label = "copy".into();
    let report = run_experiment(&spec, 2).unwrap();
    assert_eq!(report.filters[0].groups[0].values, report.filters[1].groups[0].values);
}

#[test]
fn infeasible_constraints_fail_the_experiment() {
    let mut spec = small_exp2();
    spec.constraints = vec![
        Constraint::linear_ineq(DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]), -1.0).unwrap(),
        Constraint::linear_ineq(DVector::from_vec(vec![-1.0, 0.0, 0.0, 0.0]), -1.0).unwrap(),
    ];
    let err = run_experiment(&spec, 1).unwrap_err();
    assert!(matches!(err, BenchError::TooManyFailures { failed: 4, total: 4 }));
    assert_eq!(err.exit_code(), 2);
}

fn read_csv(path: &std::path::Path) -> (String, Vec<HashMap<String, String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let (first, rest) = text.split_once('\n').unwrap();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let headers = r.headers().unwrap().clone();
    let rows = r
        .records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect();
    (first.to_string(), rows)
}

#[test]
fn summary_is_recomputable_from_run_rows() {
    let spec = small_exp2();
    let report = run_experiment(&spec, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_report(&spec, &report, dir.path()).unwrap();
    for name in [RUNS_CSV, SUMMARY_CSV, TRAJECTORY_CSV, VELOCITY_CSV] {
        assert!(written.contains(&dir.path().join(name)), "{name} missing");
    }
    let (schema, runs) = read_csv(&dir.path().join(RUNS_CSV));
    assert_eq!(schema, "# mmfilter-bench schema_version=1");
    let (_, summary) = read_csv(&dir.path().join(SUMMARY_CSV));
    for row in &summary {
        let values: Vec<f64> = runs
            .iter()
            .filter(|r| r["filter"] == row["filter"])
            .map(|r| r[&format!("rmse_{}", row["group"])].parse().unwrap())
            .collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert_eq!(mean.to_bits(), row["mean_rmse"].parse::<f64>().unwrap().to_bits());
        let cpu: Vec<f64> = runs
            .iter()
            .filter(|r| r["filter"] == row["filter"])
            .map(|r| r["wall_ns"].parse::<f64>().unwrap() * 1e-9)
            .collect();
        let mean_cpu = cpu.iter().sum::<f64>() / cpu.len() as f64;
        assert_eq!(mean_cpu.to_bits(), row["mean_cpu_s"].parse::<f64>().unwrap().to_bits());
    }
    let (_, traj) = read_csv(&dir.path().join(TRAJECTORY_CSV));
    assert_eq!(traj.len(), 35 * 4);
    assert_eq!(traj[0]["series"], "truth");
}
