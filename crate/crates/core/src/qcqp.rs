//! Dense log-barrier interior-point solver for strongly convex QCQPs:
//!
//! ```text
//! minimize    ½ dᵀ H d + bᵀ d + c          (H ≻ 0, d = x − anchor)
//! subject to  gⱼ(x) = xᵀMⱼx + qⱼᵀx + rⱼ ≤ 0   (Mⱼ ⪰ 0)
//!             E x = f
//!             lower ≤ x ≤ upper
//! ```
//!
//! Equalities are eliminated through a null-space basis. A phase-1 barrier
//! problem finds a strictly feasible start when none is supplied. The barrier
//! parameter follows `μ ← μ/10` from `μ = 1` until `m·μ < tol`, after which an
//! active-set Newton polish on the KKT system sharpens the answer.
//!
//! Everything is computed in coordinates centred on the objective's anchor,
//! so problems whose solution sits far from the origin keep full precision.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::constraints::ConvexQuadConstraint;
use crate::error::{dim_check, Error, Result};
use crate::linalg::{spd_solve, symmetrize};
use crate::objective::QuadraticSurrogate;

#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// The MM subproblem: strongly convex quadratic objective, convex quadratic
/// inequalities, optional linear equalities and box.
#[derive(Debug, Clone, PartialEq)]
pub struct QcqpProblem {
    pub objective: QuadraticSurrogate,
    pub constraints: Vec<ConvexQuadConstraint>,
    /// Rows `(a, b)` meaning `aᵀx = b`.
    pub equalities: Vec<(DVector<f64>, f64)>,
    pub domain_box: Option<DomainBox>,
}

impl QcqpProblem {
    pub fn new(objective: QuadraticSurrogate, constraints: Vec<ConvexQuadConstraint>) -> Self {
        Self {
            objective,
            constraints,
            equalities: Vec::new(),
            domain_box: None,
        }
    }

    pub fn with_equalities(mut self, equalities: Vec<(DVector<f64>, f64)>) -> Self {
        self.equalities = equalities;
        self
    }

    pub fn with_box(mut self, domain_box: DomainBox) -> Self {
        self.domain_box = Some(domain_box);
        self
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Inequalities in solver order: explicit constraints, then box rows
    /// (`x_i ≤ upper_i` before `−x_i ≤ −lower_i` for each finite bound).
    pub fn inequalities(&self) -> Vec<ConvexQuadConstraint> {
        let n = self.dim();
        let mut out = self.constraints.clone();
        if let Some(bx) = &self.domain_box {
            for i in 0..n {
                if bx.upper[i].is_finite() {
                    let mut a = DVector::zeros(n);
                    a[i] = 1.0;
                    out.push(ConvexQuadConstraint::linear(a, bx.upper[i]));
                }
                if bx.lower[i].is_finite() {
                    let mut a = DVector::zeros(n);
                    a[i] = -1.0;
                    out.push(ConvexQuadConstraint::linear(a, -bx.lower[i]));
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        for c in &self.constraints {
            dim_check("constraint dimension", n, c.dim())?;
        }
        for (a, _) in &self.equalities {
            dim_check("equality dimension", n, a.len())?;
        }
        if let Some(bx) = &self.domain_box {
            dim_check("len(lower)", n, bx.lower.len())?;
            dim_check("len(upper)", n, bx.upper.len())?;
            if bx.lower.iter().zip(bx.upper.iter()).any(|(l, u)| l > u) {
                return Err(Error::Parameter("box lower bound exceeds upper bound".into()));
            }
        }
        if self.objective.h.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite(
                "QCQP objective Hessian must be positive definite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpOptions {
    /// KKT tolerance; also the target duality gap of the barrier phase.
    pub tol: f64,
    /// Budget of Newton steps across phase 1 and phase 2.
    pub max_iter: usize,
    pub mu0: f64,
    pub mu_factor: f64,
    /// Keep every accepted iterate (see [`QcqpSolution::write_iterates_csv`]).
    pub record_iterates: bool,
}

impl Default for QcqpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            mu0: 1.0,
            mu_factor: 10.0,
            record_iterates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcqpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpSolution {
    pub x_star: DVector<f64>,
    /// One multiplier per entry of [`QcqpProblem::inequalities`].
    pub multipliers: Vec<f64>,
    pub eq_multipliers: Vec<f64>,
    pub kkt_residual: f64,
    /// Newton steps taken (phase 1, phase 2 and polish).
    pub iterations: usize,
    pub status: QcqpStatus,
    /// Barrier merit (objective divided by its largest coefficient) after each
    /// accepted Newton step, one list per centering.
    pub merit_history: Vec<Vec<f64>>,
    pub iterates: Vec<DVector<f64>>,
}

impl QcqpSolution {
    pub fn objective_value(&self, problem: &QcqpProblem) -> f64 {
        problem.objective.value(&self.x_star)
    }

    /// Dumps recorded iterates as `iter, x_1..x_n`.
    pub fn write_iterates_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.x_star.len();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        w.write_record(&header)?;
        for (k, x) in self.iterates.iter().enumerate() {
            let mut rec = vec![k.to_string()];
            rec.extend(x.iter().map(|v| crate::format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-form minimizer of a strongly convex quadratic.
pub fn solve_unconstrained(objective: &QuadraticSurrogate) -> Result<DVector<f64>> {
    objective.minimizer()
}

/// Solves `problem` with default settings apart from `tol` and `max_iter`.
pub fn solve(problem: &QcqpProblem, tol: f64, max_iter: usize) -> Result<QcqpSolution> {
    QcqpSolver::new(QcqpOptions {
        tol,
        max_iter,
        ..QcqpOptions::default()
    })
    .solve(problem, None)
}

/// Quadratic inequality in solver coordinates: `zᵀMz + qᵀz + r`.
#[derive(Debug, Clone)]
struct Ineq {
    m: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
    linear: bool,
}

impl Ineq {
    fn value(&self, z: &DVector<f64>) -> f64 {
        if self.linear {
            self.q.dot(z) + self.r
        } else {
            z.dot(&(&self.m * z)) + self.q.dot(z) + self.r
        }
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.linear {
            self.q.clone()
        } else {
            &self.m * z * 2.0 + &self.q
        }
    }
}

/// Problem after centring at the anchor and eliminating equalities.
struct Reduced {
    h: DMatrix<f64>,
    b: DVector<f64>,
    ineqs: Vec<Ineq>,
}

impl Reduced {
    fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.b.dot(z)
    }

    fn max_violation(&self, z: &DVector<f64>) -> f64 {
        self.ineqs
            .iter()
            .map(|g| g.value(z))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// The least violating of `z`, the unconstrained minimizer and the
    /// minimizers of the individual quadratic constraints.
    fn best_start(&self, z: DVector<f64>) -> DVector<f64> {
        let mut best_v = self.max_violation(&z);
        let mut best = z;
        if best_v < 0.0 {
            return best;
        }
        let mut candidates = Vec::new();
        if let Some(ch) = self.h.clone().cholesky() {
            candidates.push(-ch.solve(&self.b));
        }
        for g in self.ineqs.iter().filter(|g| !g.linear) {
            if let Ok(pinv) = g.m.clone().pseudo_inverse(1e-12 * g.m.amax().max(1e-300)) {
                candidates.push(pinv * &g.q * -0.5);
            }
        }
        for c in candidates {
            let v = self.max_violation(&c);
            if v < best_v {
                best_v = v;
                best = c;
            }
        }
        best
    }

    /// `f(z) − μ Σ log(−gⱼ(z))`, infinite outside the strict interior.
    fn barrier_merit(&self, z: &DVector<f64>, mu: f64) -> f64 {
        let mut acc = self.objective(z);
        for g in &self.ineqs {
            let v = g.value(z);
            if v >= 0.0 {
                return f64::INFINITY;
            }
            acc -= mu * (-v).ln();
        }
        acc
    }

    fn kkt_parts(&self, z: &DVector<f64>, lambda: &[f64]) -> (DVector<f64>, f64, f64) {
        let mut stat = &self.h * z + &self.b;
        let mut viol = 0.0_f64;
        let mut comp = 0.0_f64;
        for (g, &l) in self.ineqs.iter().zip(lambda) {
            let v = g.value(z);
            stat.axpy(l, &g.gradient(z), 1.0);
            viol = viol.max(v);
            comp = comp.max((l * v).abs());
        }
        (stat, viol, comp)
    }

    fn kkt_residual(&self, z: &DVector<f64>, lambda: &[f64]) -> f64 {
        let (stat, viol, comp) = self.kkt_parts(z, lambda);
        stat.norm().max(viol).max(comp)
    }
}

/// Solves `mat · x = rhs` for a symmetric matrix that should be positive
/// definite, adding a growing ridge if round-off breaks the factorization.
fn regularized_solve(mat: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = mat.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let scale = mat.diagonal().amax().max(1e-300);
    let mut ridge = 1e-14 * scale;
    for _ in 0..30 {
        let mut m = mat.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(rhs));
        }
        ridge *= 10.0;
    }
    None
}

const ARMIJO_ALPHA: f64 = 0.01;
const BACKTRACK: f64 = 0.5;
const PHASE1_PROX: f64 = 1e-8;
const POLISH_MAX_STEPS: usize = 20;

enum Phase1 {
    Feasible(DVector<f64>),
    Infeasible,
    Exhausted(DVector<f64>),
}

/// Interior-point solver. Holds only settings; create one per thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct QcqpSolver {
    pub opts: QcqpOptions,
}

struct Run {
    budget: usize,
    steps: usize,
    merits: Vec<Vec<f64>>,
    iterates: Vec<DVector<f64>>,
}

impl Run {
    fn take_step(&mut self) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        self.steps += 1;
        true
    }

    /// Newton centering of `f − μ Σ log(−g)` starting from strictly feasible `z`.
    /// Returns false if the step budget ran out.
    fn center(&mut self, red: &Reduced, z: &mut DVector<f64>, mu: f64, record: &mut dyn FnMut(&DVector<f64>)) -> bool {
        let n = z.len();
        let mut merits = vec![red.barrier_merit(z, mu)];
        let mut done = true;
        for _ in 0..100 {
            let mut grad = &red.h * &*z + &red.b;
            let mut hess = red.h.clone();
            for g in &red.ineqs {
                let v = g.value(z);
                let gr = g.gradient(z);
                let inv = 1.0 / (-v);
                grad.axpy(mu * inv, &gr, 1.0);
                hess.ger(mu * inv * inv, &gr, &gr, 1.0);
                if !g.linear {
                    hess += &g.m * (2.0 * mu * inv);
                }
            }
            symmetrize(&mut hess);
            let Some(neg_step) = regularized_solve(&hess, &grad) else {
                break;
            };
            let step = -neg_step;
            let decrement = -grad.dot(&step);
            let f0 = *merits.last().unwrap_or(&f64::INFINITY);
            // below the round-off of the merit itself no further progress is measurable
            if !(decrement > 0.0) || decrement * 0.5 <= 1e-10 * mu + 8.0 * f64::EPSILON * (1.0 + f0.abs()) {
                break;
            }
            if !self.take_step() {
                done = false;
                break;
            }
            let mut s = 1.0;
            let mut accepted = None;
            while s > 1e-18 {
                let cand = &*z + &step * s;
                let fc = red.barrier_merit(&cand, mu);
                if fc.is_finite() && fc <= f0 - ARMIJO_ALPHA * s * decrement {
                    accepted = Some((cand, fc));
                    break;
                }
                s *= BACKTRACK;
            }
            let Some((cand, fc)) = accepted else {
                break;
            };
            *z = cand;
            merits.push(fc);
            record(z);
            if n == 0 {
                break;
            }
        }
        self.merits.push(merits);
        done
    }

    /// Minimizes `s` subject to `gⱼ(z) ≤ s` until some `z` is strictly feasible.
    fn phase1(&mut self, red: &Reduced, z0: &DVector<f64>, record: &mut dyn FnMut(&DVector<f64>)) -> Phase1 {
        let n = z0.len();
        let m = red.ineqs.len() as f64;
        let mut z = z0.clone();
        let mut s = red.max_violation(&z).max(0.0) + 1.0;
        // keep t·s of order one so damped Newton needs few steps
        let mut t = 1.0 / s;
        let merit = |z: &DVector<f64>, s: f64, t: f64| -> f64 {
            let mut acc = t * s + 0.5 * PHASE1_PROX * (z - z0).norm_squared();
            for g in &red.ineqs {
                let u = s - g.value(z);
                if u <= 0.0 {
                    return f64::INFINITY;
                }
                acc -= u.ln();
            }
            acc
        };
        for _outer in 0..80 {
            let mut merits = vec![merit(&z, s, t)];
            let mut centered = false;
            loop {
                if red.max_violation(&z) < 0.0 {
                    self.merits.push(merits);
                    return Phase1::Feasible(z);
                }
                // variables (z, s)
                let mut grad = DVector::zeros(n + 1);
                let mut hess = DMatrix::zeros(n + 1, n + 1);
                grad[n] = t;
                for i in 0..n {
                    grad[i] = PHASE1_PROX * (z[i] - z0[i]);
                    hess[(i, i)] = PHASE1_PROX;
                }
                for g in &red.ineqs {
                    let u = s - g.value(&z);
                    let gr = g.gradient(&z);
                    let mut a = DVector::zeros(n + 1);
                    a.rows_mut(0, n).copy_from(&(-&gr));
                    a[n] = 1.0;
                    // ∇(−log u) = −a/u,  ∇² = a aᵀ/u² + [2M/u, 0; 0, 0]
                    grad.axpy(-1.0 / u, &a, 1.0);
                    hess.ger(1.0 / (u * u), &a, &a, 1.0);
                    if !g.linear {
                        let mut block = hess.view_mut((0, 0), (n, n));
                        block += &g.m * (2.0 / u);
                    }
                }
                symmetrize(&mut hess);
                let Some(neg_step) = regularized_solve(&hess, &grad) else {
                    break;
                };
                let step = -neg_step;
                let decrement = -grad.dot(&step);
                if !(decrement > 0.0) || decrement * 0.5 <= 1e-12 {
                    centered = true;
                    break;
                }
                if !self.take_step() {
                    self.merits.push(merits);
                    return Phase1::Exhausted(z);
                }
                let f0 = *merits.last().unwrap_or(&f64::INFINITY);
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-18 {
                    let zc = &z + step.rows(0, n) * alpha;
                    let sc = s + step[n] * alpha;
                    let fc = merit(&zc, sc, t);
                    if fc.is_finite() && fc <= f0 - ARMIJO_ALPHA * alpha * decrement {
                        z = zc;
                        s = sc;
                        merits.push(fc);
                        record(&z);
                        accepted = true;
                        break;
                    }
                    alpha *= BACKTRACK;
                }
                if !accepted {
                    break;
                }
            }
            self.merits.push(merits);
            if red.max_violation(&z) < 0.0 {
                return Phase1::Feasible(z);
            }
            // once centred, s is within m/t of the phase-1 optimum
            if centered && (s - m / t > 0.0 || m / t < 1e-14) {
                return Phase1::Infeasible;
            }
            t *= 10.0;
        }
        Phase1::Infeasible
    }
}

impl QcqpSolver {
    pub fn new(opts: QcqpOptions) -> Self {
        Self { opts }
    }

    /// Solves `problem`, optionally starting from `start` (any point; it need not be feasible).
    pub fn solve(&self, problem: &QcqpProblem, start: Option<&DVector<f64>>) -> Result<QcqpSolution> {
        if !(self.opts.tol > 0.0) {
            return Err(Error::Parameter("tolerance must be positive".into()));
        }
        problem.validate()?;
        if let Some(s) = start {
            dim_check("len(start)", problem.dim(), s.len())?;
        }
        let anchor = &problem.objective.anchor;
        let n = problem.dim();
        let ineqs_x = problem.inequalities();

        // local coordinates d = x − anchor
        let local: Vec<Ineq> = ineqs_x
            .iter()
            .map(|g| {
                let c = g.recentered(anchor);
                let linear = c.is_linear();
                Ineq {
                    m: c.m,
                    q: c.q,
                    r: c.r,
                    linear,
                }
            })
            .collect();
        let h = problem.objective.h.clone();
        let b = problem.objective.b.clone();

        // equality elimination: d = d_p + Z z
        let (d_p, basis) = if problem.equalities.is_empty() {
            (DVector::zeros(n), None)
        } else {
            let p = problem.equalities.len();
            let e = DMatrix::from_fn(p, n, |i, j| problem.equalities[i].0[j]);
            let f = DVector::from_fn(p, |i, _| problem.equalities[i].1) - &e * anchor;
            let (d_p, z) = null_space_split(&e, &f)?;
            if (&e * &d_p - &f).amax() > 1e-9 * (1.0 + f.amax()) {
                return Ok(self.infeasible(problem, anchor + &d_p, 0));
            }
            (d_p, Some(z))
        };

        let mut reduced = match &basis {
            None => Reduced { h: h.clone(), b: b.clone(), ineqs: local.clone() },
            Some(zb) => {
                let mut hz = zb.tr_mul(&(&h * zb));
                symmetrize(&mut hz);
                let bz = zb.tr_mul(&(&h * &d_p + &b));
                let ineqs = local
                    .iter()
                    .map(|g| {
                        let mz = zb.tr_mul(&(&g.m * zb));
                        let qz = zb.tr_mul(&(&g.m * &d_p * 2.0 + &g.q));
                        Ineq {
                            linear: g.linear,
                            m: crate::linalg::symmetrized(mz),
                            q: qz,
                            r: g.value(&d_p),
                        }
                    })
                    .collect();
                Reduced { h: hz, b: bz, ineqs }
            }
        };
        // the barrier schedule is absolute, so put the objective on a unit scale
        let obj_scale = reduced.h.amax().max(reduced.b.amax()).max(f64::MIN_POSITIVE);
        reduced.h /= obj_scale;
        reduced.b /= obj_scale;
        let k = reduced.b.len();
        let to_x = |z: &DVector<f64>| -> DVector<f64> {
            match &basis {
                None => anchor + z,
                Some(zb) => anchor + &d_p + zb * z,
            }
        };
        let z_start = match (start, &basis) {
            (None, _) => DVector::zeros(k),
            (Some(s), None) => s - anchor,
            (Some(s), Some(zb)) => zb.tr_mul(&(s - anchor - &d_p)),
        };

        let mut run = Run {
            budget: self.opts.max_iter,
            steps: 0,
            merits: Vec::new(),
            iterates: Vec::new(),
        };
        let record_on = self.opts.record_iterates;
        let mut recorded: Vec<DVector<f64>> = Vec::new();
        let mut record = |z: &DVector<f64>| {
            if record_on {
                recorded.push(z.clone());
            }
        };

        let (z, lambda, status) = if reduced.ineqs.is_empty() {
            let z = if k == 0 {
                DVector::zeros(0)
            } else {
                -spd_solve(&reduced.h, &reduced.b)?
            };
            run.steps += 1;
            (z, Vec::new(), QcqpStatus::Optimal)
        } else if k == 0 {
            // equalities pin the point down completely
            let z = DVector::zeros(0);
            if reduced.max_violation(&z) > self.opts.tol {
                return Ok(self.infeasible(problem, to_x(&z), 0));
            }
            (z, vec![0.0; reduced.ineqs.len()], QcqpStatus::Optimal)
        } else {
            let z_start = reduced.best_start(z_start);
            let z0 = if reduced.max_violation(&z_start) < 0.0 {
                z_start
            } else {
                match run.phase1(&reduced, &z_start, &mut record) {
                    Phase1::Feasible(z) => z,
                    Phase1::Infeasible => {
                        let steps = run.steps;
                        return Ok(self.infeasible(problem, to_x(&z_start), steps));
                    }
                    Phase1::Exhausted(z) => {
                        let steps = run.steps;
                        let mut sol = self.infeasible(problem, to_x(&z), steps);
                        sol.status = QcqpStatus::MaxIter;
                        return Ok(sol);
                    }
                }
            };
            let (z, lambda, status) = self.barrier(&reduced, z0, &mut run, &mut record);
            (z, lambda.into_iter().map(|l| l * obj_scale).collect(), status)
        };
        run.iterates = recorded;

        let x = to_x(&z);
        let (eq_multipliers, kkt) = self.certify(problem, &ineqs_x, &x, &lambda);
        let status = match status {
            QcqpStatus::Optimal if kkt <= self.opts.tol => QcqpStatus::Optimal,
            QcqpStatus::Infeasible => QcqpStatus::Infeasible,
            _ => QcqpStatus::MaxIter,
        };
        Ok(QcqpSolution {
            x_star: x,
            multipliers: lambda,
            eq_multipliers,
            kkt_residual: kkt,
            iterations: run.steps,
            status,
            merit_history: run.merits,
            iterates: run.iterates,
        })
    }

    fn infeasible(&self, problem: &QcqpProblem, x: DVector<f64>, steps: usize) -> QcqpSolution {
        QcqpSolution {
            x_star: x,
            multipliers: vec![0.0; problem.inequalities().len()],
            eq_multipliers: vec![0.0; problem.equalities.len()],
            kkt_residual: f64::INFINITY,
            iterations: steps,
            status: QcqpStatus::Infeasible,
            merit_history: Vec::new(),
            iterates: Vec::new(),
        }
    }

    /// Barrier path followed by an active-set polish.
    fn barrier(
        &self,
        red: &Reduced,
        mut z: DVector<f64>,
        run: &mut Run,
        record: &mut dyn FnMut(&DVector<f64>),
    ) -> (DVector<f64>, Vec<f64>, QcqpStatus) {
        let m = red.ineqs.len() as f64;
        let mut mu = self.opts.mu0;
        let mut exhausted = false;
        loop {
            if !run.center(red, &mut z, mu, record) {
                exhausted = true;
                break;
            }
            if m * mu < self.opts.tol {
                break;
            }
            mu /= self.opts.mu_factor;
        }
        let lambda: Vec<f64> = red.ineqs.iter().map(|g| mu / (-g.value(&z))).collect();
        let barrier_res = red.kkt_residual(&z, &lambda);
        let (z, lambda) = match self.polish(red, &z, &lambda, run) {
            Some((zp, lp)) if red.kkt_residual(&zp, &lp) < barrier_res => (zp, lp),
            _ => (z, lambda),
        };
        let status = if exhausted {
            QcqpStatus::MaxIter
        } else {
            QcqpStatus::Optimal
        };
        (z, lambda, status)
    }

    /// Newton's method on the KKT equations of the constraints the barrier
    /// identified as active. A constraint whose multiplier comes out negative
    /// is dropped and one left violated is added, for a few rounds. The result
    /// is pulled back into the feasible set along the segment to the barrier
    /// point if round-off pushed it outside.
    fn polish(
        &self,
        red: &Reduced,
        z_bar: &DVector<f64>,
        lambda_bar: &[f64],
        run: &mut Run,
    ) -> Option<(DVector<f64>, Vec<f64>)> {
        let mut active: Vec<usize> = red
            .ineqs
            .iter()
            .enumerate()
            .filter(|(j, g)| lambda_bar[*j] > -g.value(z_bar))
            .map(|(j, _)| j)
            .collect();
        for _ in 0..=2 * red.ineqs.len() {
            let (z, lam) = self.polish_active(red, z_bar, lambda_bar, &active, run)?;
            let most_negative = lam
                .iter()
                .enumerate()
                .filter(|(_, l)| **l < 0.0)
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(idx, _)| idx);
            if let Some(idx) = most_negative {
                active.remove(idx);
                continue;
            }
            let most_violated = red
                .ineqs
                .iter()
                .enumerate()
                .filter(|(j, g)| !active.contains(j) && g.value(&z) > 0.0)
                .max_by(|a, b| a.1.value(&z).total_cmp(&b.1.value(&z)))
                .map(|(j, _)| j);
            if let Some(j) = most_violated {
                active.push(j);
                active.sort_unstable();
                continue;
            }
            return Some(self.pull_back(red, z_bar, z, &active, &lam));
        }
        None
    }

    /// Newton iterations on stationarity plus `gⱼ = 0` for `j ∈ active`.
    fn polish_active(
        &self,
        red: &Reduced,
        z_bar: &DVector<f64>,
        lambda_bar: &[f64],
        active: &[usize],
        run: &mut Run,
    ) -> Option<(DVector<f64>, Vec<f64>)> {
        let k = z_bar.len();
        let na = active.len();
        if na > k {
            return None;
        }
        let mut z = z_bar.clone();
        let mut lam: Vec<f64> = active.iter().map(|&j| lambda_bar[j]).collect();
        let residual = |z: &DVector<f64>, lam: &[f64]| -> DVector<f64> {
            let mut r = DVector::zeros(k + na);
            let mut stat = &red.h * z + &red.b;
            for (idx, &j) in active.iter().enumerate() {
                stat.axpy(lam[idx], &red.ineqs[j].gradient(z), 1.0);
                r[k + idx] = red.ineqs[j].value(z);
            }
            r.rows_mut(0, k).copy_from(&stat);
            r
        };
        let mut res = residual(&z, &lam);
        for _ in 0..POLISH_MAX_STEPS {
            if res.norm() < 1e-15 {
                break;
            }
            let mut jac = DMatrix::zeros(k + na, k + na);
            let mut top = red.h.clone();
            for (idx, &j) in active.iter().enumerate() {
                let g = &red.ineqs[j];
                if !g.linear {
                    top += &g.m * (2.0 * lam[idx]);
                }
                let gr = g.gradient(&z);
                for i in 0..k {
                    jac[(i, k + idx)] = gr[i];
                    jac[(k + idx, i)] = gr[i];
                }
            }
            jac.view_mut((0, 0), (k, k)).copy_from(&top);
            let Some(step) = jac.lu().solve(&(-&res)) else {
                break;
            };
            let zn = &z + step.rows(0, k);
            let ln: Vec<f64> = lam.iter().enumerate().map(|(i, l)| l + step[k + i]).collect();
            let rn = residual(&zn, &ln);
            run.steps += 1;
            if !(rn.norm() < res.norm()) {
                break;
            }
            z = zn;
            lam = ln;
            res = rn;
        }
        Some((z, lam))
    }

    fn pull_back(
        &self,
        red: &Reduced,
        z_bar: &DVector<f64>,
        mut z: DVector<f64>,
        active: &[usize],
        lam: &[f64],
    ) -> (DVector<f64>, Vec<f64>) {
        if red.max_violation(&z) > 0.0 {
            // bisect on the segment towards the strictly feasible barrier point
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let zm = &z + (z_bar - &z) * mid;
                if red.max_violation(&zm) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            z = &z + (z_bar - &z) * hi;
        }
        let mut full = vec![0.0; red.ineqs.len()];
        for (idx, &j) in active.iter().enumerate() {
            full[j] = lam[idx];
        }
        (z, full)
    }

    /// Equality multipliers by least squares and the overall KKT residual in x-space.
    fn certify(
        &self,
        problem: &QcqpProblem,
        ineqs: &[ConvexQuadConstraint],
        x: &DVector<f64>,
        lambda: &[f64],
    ) -> (Vec<f64>, f64) {
        let mut stat = problem.objective.gradient(x);
        let mut viol = 0.0_f64;
        let mut comp = 0.0_f64;
        for (g, &l) in ineqs.iter().zip(lambda) {
            let v = g.value(x);
            stat.axpy(l, &g.gradient(x), 1.0);
            viol = viol.max(v);
            comp = comp.max((l * v).abs());
        }
        let mut eq_mult = Vec::new();
        if !problem.equalities.is_empty() {
            let p = problem.equalities.len();
            let n = x.len();
            let et = DMatrix::from_fn(n, p, |i, j| problem.equalities[j].0[i]);
            let nu = et
                .clone()
                .pseudo_inverse(1e-12)
                .map(|pinv| -(pinv * &stat))
                .unwrap_or_else(|_| DVector::zeros(p));
            stat += &et * &nu;
            for (a, b) in &problem.equalities {
                viol = viol.max((a.dot(x) - b).abs());
            }
            eq_mult = nu.iter().copied().collect();
        }
        (eq_mult, stat.norm().max(viol).max(comp))
    }
}

/// Minimum-norm solution `d_p` of `E d = f` and an orthonormal basis `Z` of `null(E)`.
fn null_space_split(e: &DMatrix<f64>, f: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = e.ncols();
    let gram = e.tr_mul(e);
    let eig = SymmetricEigen::new(gram);
    let max_ev = eig.eigenvalues.amax().max(1e-300);
    let null_cols: Vec<usize> = (0..n)
        .filter(|&i| eig.eigenvalues[i] <= 1e-12 * max_ev)
        .collect();
    let mut z = DMatrix::zeros(n, null_cols.len());
    for (c, &i) in null_cols.iter().enumerate() {
        z.set_column(c, &eig.eigenvectors.column(i));
    }
    let pinv = e
        .clone()
        .pseudo_inverse(1e-12 * max_ev.sqrt())
        .map_err(|e| Error::Parameter(format!("equality pseudo-inverse failed: {e}")))?;
    Ok((pinv * f, z))
}
