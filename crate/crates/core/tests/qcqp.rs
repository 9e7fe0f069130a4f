mod common;

use mmfilter::constraints::ConvexQuadConstraint;
use mmfilter::objective::QuadraticSurrogate;
use mmfilter::qcqp::*;
use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn unconstrained_matches_conjugate_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let h = common::random_spd(n, 0.1, &mut rng);
        let b = common::normal_vec(n, &mut rng);
        let obj = QuadraticSurrogate::from_standard_form(h.clone(), b.clone(), 0.0).unwrap();
        let x = solve_unconstrained(&obj).unwrap();
        let cg = common::cg_solve(&h, &(-&b), 1e-14);
        assert!((&x - &cg).amax() < 1e-8 * cg.amax().max(1.0));
        assert!((&h * &x + &b).norm() <= 1e-10 * b.norm().max(1e-300));
    }
}

#[test]
fn identity_objective_recovers_target() {
    let v = dvector![1.5, -2.0, 0.25];
    let obj = QuadraticSurrogate::from_standard_form(DMatrix::identity(3, 3), -&v, 0.0).unwrap();
    assert_eq!(solve_unconstrained(&obj).unwrap(), v);
}

#[test]
fn random_instances_certified_against_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..40 {
        let (problem, sets) = common::random_qcqp(4, 2, &mut rng);
        let sol = solve(&problem, 1e-8, 200).unwrap();
        assert_eq!(sol.status, QcqpStatus::Optimal);
        assert!(sol.kkt_residual <= 1e-8);
        assert!(common::kkt_residual(&problem, &sol) <= 1e-8, "kkt {}", common::kkt_residual(&problem, &sol));
        let oracle = common::qcqp_oracle_value(&problem, &sets);
        assert!((sol.objective_value(&problem) - oracle).abs() <= 1e-5);
    }
}

#[test]
fn objective_scaling_leaves_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let (problem, _) = common::random_qcqp(3, 2, &mut rng);
        let base = solve(&problem, 1e-8, 200).unwrap();
        let alpha = rng.random_range(0.01..100.0);
        let scaled = QcqpProblem {
            objective: problem.objective.scaled(alpha),
            ..problem.clone()
        };
        let other = solve(&scaled, 1e-8, 200).unwrap();
        assert!((&base.x_star - &other.x_star).amax() < 1e-8);
    }
}

#[test]
fn prior_with_one_active_halfspace_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let n = 3;
        let w = common::random_spd(n, 0.5, &mut rng);
        let mean = common::normal_vec(n, &mut rng);
        let a = common::normal_vec(n, &mut rng);
        let beta = a.dot(&mean) - 1.0;
        // min (x−m)ᵀW(x−m) s.t. aᵀx ≤ β; active, so x = m − W⁻¹a (aᵀm − β)/(aᵀW⁻¹a)
        let winv_a = w.clone().cholesky().unwrap().solve(&a);
        let closed = &mean - &winv_a * ((a.dot(&mean) - beta) / a.dot(&winv_a));
        let obj = QuadraticSurrogate::new(&w * 2.0, DVector::zeros(n), 0.0, mean.clone()).unwrap();
        let problem = QcqpProblem::new(obj, vec![ConvexQuadConstraint::linear(a, beta)]);
        let sol = solve(&problem, 1e-8, 200).unwrap();
        assert!((&sol.x_star - &closed).amax() < 1e-8);
    }
}

#[test]
fn solves_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (problem, _) = common::random_qcqp(4, 3, &mut rng);
    let a = solve(&problem, 1e-8, 200).unwrap();
    let b = solve(&problem, 1e-8, 200).unwrap();
    assert_eq!(a, b);
}

#[test]
fn merit_never_increases_within_a_centering() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let (problem, _) = common::random_qcqp(4, 2, &mut rng);
        let sol = solve(&problem, 1e-8, 200).unwrap();
        for run in &sol.merit_history {
            for w in run.windows(2) {
                assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
        }
    }
}

#[test]
fn far_from_origin_keeps_precision() {
    // projection of (0, 104) onto the disk of radius 100.1 about the origin
    let obj = QuadraticSurrogate::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2), 0.0, dvector![0.0, 104.0]).unwrap();
    let disk = ConvexQuadConstraint::new(DMatrix::identity(2, 2), DVector::zeros(2), -100.1f64.powi(2)).unwrap();
    let sol = solve(&QcqpProblem::new(obj, vec![disk]), 1e-8, 200).unwrap();
    assert!((sol.x_star - dvector![0.0, 100.1]).amax() < 1e-9);
}
