//! Independent reference computations used as test oracles.
#![allow(dead_code)]

use mmfilter::constraints::ConvexQuadConstraint;
use mmfilter::objective::QuadraticSurrogate;
use mmfilter::qcqp::{QcqpProblem, QcqpSolution};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_vec<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub fn normal_mat<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_iterator(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `BBᵀ + shift·I`.
pub fn random_spd<R: Rng>(n: usize, shift: f64, rng: &mut R) -> DMatrix<f64> {
    let b = normal_mat(n, n, rng);
    &b * b.transpose() + DMatrix::identity(n, n) * shift
}

/// `BBᵀ` with `B` of width `rank`.
pub fn random_psd<R: Rng>(n: usize, rank: usize, rng: &mut R) -> DMatrix<f64> {
    let b = normal_mat(n, rank, rng);
    &b * b.transpose()
}

/// Uniform point in the ball of radius `radius` about `center`.
pub fn in_ball<R: Rng>(center: &DVector<f64>, radius: f64, rng: &mut R) -> DVector<f64> {
    let n = center.len();
    let dir = normal_vec(n, rng).normalize();
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center + dir * r
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 50)
}

/// Straight-line MAP objective, written without matrix helpers.
pub fn map_value(
    mean: &[f64],
    prec: &DMatrix<f64>,
    c: &DMatrix<f64>,
    y: &[f64],
    sigma: &[f64],
    nu: &[f64],
    x: &[f64],
) -> f64 {
    let n = mean.len();
    let mut total = 0.0;
    for r in 0..n {
        for s in 0..n {
            total += (x[r] - mean[r]) * prec[(r, s)] * (x[s] - mean[s]);
        }
    }
    for i in 0..y.len() {
        let mut pred = 0.0;
        for j in 0..n {
            pred += c[(i, j)] * x[j];
        }
        let w = pred - y[i];
        total += (1.0 + nu[i]) * (1.0 + w * w / (sigma[i] * sigma[i] * nu[i])).ln();
    }
    total
}

/// Central finite-difference gradient.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        }),
    )
}

/// Conjugate gradients for `H x = rhs`, `H` SPD.
pub fn cg_solve(h: &DMatrix<f64>, rhs: &DVector<f64>, tol: f64) -> DVector<f64> {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..10 * rhs.len() + 100 {
        if rs.sqrt() <= tol {
            break;
        }
        let hp = h * &p;
        let alpha = rs / p.dot(&hp);
        x += &p * alpha;
        r -= hp * alpha;
        let rs_new = r.dot(&r);
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    x
}

/// Joseph-form covariance update `(I − KC)P(I − KC)ᵀ + KRKᵀ` with the textbook gain.
pub fn joseph_update(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let s = c * p * c.transpose() + r;
    let k = p * c.transpose() * s.try_inverse().unwrap();
    let ikc = DMatrix::identity(p.nrows(), p.nrows()) - &k * c;
    &ikc * p * ikc.transpose() + &k * r * k.transpose()
}

/// Textbook Kalman filter with explicit inverses, no predict at the first step.
pub fn kalman_reference(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut out = Vec::new();
    for (k, y) in ys.iter().enumerate() {
        if k > 0 {
            x = a * &x;
            p = a * &p * a.transpose() + q;
        }
        let s = c * &p * c.transpose() + r;
        let kg = &p * c.transpose() * s.try_inverse().unwrap();
        x = &x + &kg * (y - c * &x);
        p = &p - &kg * c * &p;
        out.push((x.clone(), p.clone()));
    }
    out
}

/// Convex quadratic set `{x : (x−c)ᵀM(x−c) + qᵀ(x−c) + r ≤ 0}`.
#[derive(Debug, Clone)]
pub struct QuadSet {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: f64,
    pub center: DVector<f64>,
}

impl QuadSet {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        d.dot(&(&self.m * &d)) + self.q.dot(&d) + self.r
    }
}

/// Random strongly convex QCQP with a known strictly feasible point.
pub fn random_qcqp<R: Rng>(n: usize, m: usize, rng: &mut R) -> (QcqpProblem, Vec<QuadSet>) {
    let h = random_spd(n, 0.5, rng);
    let anchor = normal_vec(n, rng);
    let b = normal_vec(n, rng) * 3.0;
    let objective = QuadraticSurrogate::new(h, b, 0.0, anchor).unwrap();
    let interior = normal_vec(n, rng) * 0.5;
    let mut constraints = Vec::new();
    let mut sets = Vec::new();
    for _ in 0..m {
        let rank = rng.random_range(1..=n);
        let mm = random_psd(n, rank, rng) + DMatrix::identity(n, n) * rng.random_range(0.0..0.2);
        let center = normal_vec(n, rng);
        let q = normal_vec(n, rng);
        let d = &interior - &center;
        let slack = rng.random_range(0.1..1.0);
        let r = -(d.dot(&(&mm * &d)) + q.dot(&d)) - slack;
        sets.push(QuadSet {
            m: mm.clone(),
            q: q.clone(),
            r,
            center: center.clone(),
        });
        constraints.push(ConvexQuadConstraint::about(center, mm, q, r).unwrap());
    }
    (QcqpProblem::new(objective, constraints), sets)
}

/// Max of stationarity, primal feasibility, dual feasibility and complementarity.
pub fn kkt_residual(problem: &QcqpProblem, sol: &QcqpSolution) -> f64 {
    let x = &sol.x_star;
    let ineq = problem.inequalities();
    let mut grad = problem.objective.gradient(x);
    let mut worst: f64 = 0.0;
    for (g, &lam) in ineq.iter().zip(&sol.multipliers) {
        let v = g.value(x);
        grad += g.gradient(x) * lam;
        worst = worst.max(v.max(0.0)).max((-lam).max(0.0)).max((lam * v).abs());
    }
    for ((a, b), &mu) in problem.equalities.iter().zip(&sol.eq_multipliers) {
        grad += a * mu;
        worst = worst.max((a.dot(x) - b).abs());
    }
    worst.max(grad.amax())
}

/// Lagrange dual value `d(λ) = min_x f(x) + Σλⱼgⱼ(x)` and its minimizer.
pub fn dual_value(problem: &QcqpProblem, sets: &[QuadSet], lambda: &[f64]) -> (f64, DVector<f64>) {
    let obj = &problem.objective;
    let mut hess = obj.h.clone();
    let mut rhs = -(&obj.b - &obj.h * &obj.anchor);
    for (s, &l) in sets.iter().zip(lambda) {
        hess += &s.m * (2.0 * l);
        rhs -= (&s.q - &s.m * &s.center * 2.0) * l;
    }
    let x = hess.cholesky().expect("dual Hessian is positive definite").solve(&rhs);
    let value = obj.value(&x) + sets.iter().zip(lambda).map(|(s, l)| l * s.value(&x)).sum::<f64>();
    (value, x)
}

/// Accelerated projected gradient ascent on the dual over `λ ≥ 0`, with
/// backtracking and adaptive restart. Returns the best dual value: a lower
/// bound on the optimum that is tight at convergence.
pub fn qcqp_oracle_value(problem: &QcqpProblem, sets: &[QuadSet]) -> f64 {
    let m = sets.len();
    let grad_at = |x: &DVector<f64>| -> Vec<f64> { sets.iter().map(|s| s.value(x)).collect() };
    let mut lambda = vec![0.0; m];
    let (mut best, _) = dual_value(problem, sets, &lambda);
    let mut prev = lambda.clone();
    let mut t = 1.0_f64;
    let mut step = 1.0;
    for _ in 0..100_000 {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let y: Vec<f64> = (0..m).map(|j| (lambda[j] + beta * (lambda[j] - prev[j])).max(0.0)).collect();
        let (dy, xy) = dual_value(problem, sets, &y);
        let gy = grad_at(&xy);
        step *= 1.5;
        let (cand, dc) = loop {
            let cand: Vec<f64> = (0..m).map(|j| (y[j] + step * gy[j]).max(0.0)).collect();
            let (dc, _) = dual_value(problem, sets, &cand);
            let lin: f64 = (0..m).map(|j| (cand[j] - y[j]) * gy[j]).sum();
            let dist2: f64 = (0..m).map(|j| (cand[j] - y[j]).powi(2)).sum();
            if dc >= dy + lin - dist2 / (2.0 * step) || step < 1e-16 {
                break (cand, dc);
            }
            step *= 0.5;
        };
        let moved = (0..m).map(|j| (cand[j] - lambda[j]).abs()).fold(0.0, f64::max);
        if dc < best {
            // restart the momentum
            t = 1.0;
            prev = lambda.clone();
            continue;
        }
        best = dc;
        prev = std::mem::replace(&mut lambda, cand);
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    best
}
