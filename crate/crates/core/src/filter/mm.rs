use nalgebra::DVector;

use super::max_constraint_value;
use crate::constraints::{Constraint, FEASIBILITY_TOL};
use crate::error::{Error, Result};
use crate::linalg::inf_norm;
use crate::objective::Majorize;
use crate::qcqp::{QcqpOptions, QcqpProblem, QcqpSolver, QcqpStatus};

/// Stopping rule and subproblem settings of the MM loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmOptions {
    /// Stop once `‖x_{t+1} − x_t‖∞` falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    pub qcqp: QcqpOptions,
}

impl Default for MmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            qcqp: QcqpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmOutcome {
    pub x: DVector<f64>,
    /// Number of subproblems solved.
    pub iterations: usize,
    /// Objective at the start point and after every iteration.
    pub f_history: Vec<f64>,
    pub converged: bool,
}

impl MmOutcome {
    pub fn f_final(&self) -> f64 {
        self.f_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Moves `x` into the feasible set when a nonconvex constraint is present.
///
/// Majorizing a nonconvex constraint at an infeasible anchor can leave an
/// empty subproblem, so the start is repaired by cyclic projection onto each
/// constraint. Convex-only problems are returned unchanged.
pub fn repair_start(constraints: &[Constraint], x: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = x.clone();
    if constraints.iter().all(|c| c.is_convex()) {
        return Ok(x);
    }
    for _ in 0..REPAIR_SWEEPS {
        if max_constraint_value(constraints, &x)? <= FEASIBILITY_TOL {
            break;
        }
        for c in constraints {
            if c.eval(&x)? > FEASIBILITY_TOL {
                x = c.project(&x)?;
            }
        }
    }
    Ok(x)
}

const REPAIR_SWEEPS: usize = 100;

/// Majorization-minimization of `objective` over `constraints` from `x0`.
///
/// Each iteration minimizes the objective's quadratic surrogate subject to
/// the convex constraints as given and the nonconvex ones majorized at the
/// current point. If the current point is feasible and the subproblem
/// solution is no better on the surrogate, the current point is kept and the
/// loop ends.
pub fn mm_minimize<O: Majorize>(
    objective: &O,
    constraints: &[Constraint],
    x0: &DVector<f64>,
    opts: &MmOptions,
) -> Result<MmOutcome> {
    let n = objective.dim();
    crate::error::dim_check("len(x0)", n, x0.len())?;
    for c in constraints {
        c.check_dim(n)?;
    }
    let equalities: Vec<(DVector<f64>, f64)> = constraints
        .iter()
        .filter_map(|c| c.equality().map(|(a, b)| (a.clone(), b)))
        .collect();
    let inequalities: Vec<&Constraint> = constraints.iter().filter(|c| !c.is_equality()).collect();
    let solver = QcqpSolver::new(opts.qcqp);

    let mut x = repair_start(constraints, x0)?;
    let mut f_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let surrogate = objective.majorize(&x)?;
        // tangency: the surrogate's constant is F(x)
        f_history.push(surrogate.c);
        let candidate = if constraints.is_empty() {
            surrogate.minimizer()?
        } else {
            let majorized = inequalities
                .iter()
                .map(|c| c.majorize(&x))
                .collect::<Result<Vec<_>>>()?;
            let problem = QcqpProblem::new(surrogate.clone(), majorized).with_equalities(equalities.clone());
            let sol = solver.solve(&problem, Some(&x))?;
            match sol.status {
                QcqpStatus::Optimal => sol.x_star,
                QcqpStatus::Infeasible => return Err(Error::Infeasible),
                QcqpStatus::MaxIter => {
                    let worst = problem
                        .inequalities()
                        .iter()
                        .map(|g| g.value(&sol.x_star))
                        .fold(f64::NEG_INFINITY, f64::max);
                    if worst > FEASIBILITY_TOL {
                        return Err(Error::SolverMaxIter(sol.kkt_residual));
                    }
                    sol.x_star
                }
            }
        };
        iterations += 1;

        // the unconstrained candidate is the exact surrogate minimizer, so only
        // constrained solves need the descent guard
        let guarded = !constraints.is_empty() && max_constraint_value(constraints, &x)? <= FEASIBILITY_TOL;
        let next = if guarded && surrogate.value(&candidate) > surrogate.c {
            x.clone()
        } else {
            candidate
        };
        let step = inf_norm(&(&next - &x));
        x = next;
        if step <= opts.tol {
            converged = true;
            break;
        }
    }
    f_history.push(objective.value(&x)?);

    Ok(MmOutcome {
        x,
        iterations,
        f_history,
        converged,
    })
}
