//! The per-step MAP objective of the Student-t filter and its quadratic
//! majorizers.
//!
//! For a Gaussian prior `N(x̂, P)` and measurement `y` the objective is
//!
//! ```text
//! F(x) = (x − x̂)ᵀ P⁻¹ (x − x̂) + Σᵢ (1 + νᵢ) log(1 + (Cᵢx − yᵢ)² / (σᵢ² νᵢ))
//! ```
//!
//! The first term is the squared Mahalanobis distance; the sum is the
//! nonconvex part `F_ncvx`. Two surrogates are available: [`SurrogateKind::Log`]
//! linearizes the concave logarithm, [`SurrogateKind::Smooth`] applies the
//! descent lemma to `F_ncvx` with the constant from [`MapObjective::lipschitz`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{is_symmetric, spd_solve};

/// Which quadratic upper bound of `F` to minimize at each MM iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Tangent bound on `log(h)`; reweights each residual by `mᵢ`.
    #[default]
    Log,
    /// Descent-lemma bound with curvature `L·I` on the nonconvex part.
    Smooth,
}

/// Quadratic written in Taylor form about `anchor`:
///
/// ```text
/// q(x) = ½ dᵀ H d + bᵀ d + c,   d = x − anchor
/// ```
///
/// so `c` is the value and `b` the gradient at the anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub anchor: DVector<f64>,
}

impl QuadraticSurrogate {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, c: f64, anchor: DVector<f64>) -> Result<Self> {
        let n = anchor.len();
        dim_check("rows(H)", n, h.nrows())?;
        dim_check("cols(H)", n, h.ncols())?;
        dim_check("len(b)", n, b.len())?;
        if !is_symmetric(&h, 1e-10) {
            return Err(Error::Parameter("surrogate Hessian must be symmetric".into()));
        }
        Ok(Self { h, b, c, anchor })
    }

    /// `½ xᵀ H x + bᵀ x + c` anchored at the origin.
    pub fn from_standard_form(h: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        let n = b.len();
        Self::new(h, b, c, DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.anchor;
        0.5 * d.dot(&(&self.h * &d)) + self.b.dot(&d) + self.c
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.anchor;
        &self.h * d + &self.b
    }

    /// The same quadratic re-expanded about `anchor`.
    pub fn recentered(&self, anchor: &DVector<f64>) -> QuadraticSurrogate {
        QuadraticSurrogate {
            h: self.h.clone(),
            b: self.gradient(anchor),
            c: self.value(anchor),
            anchor: anchor.clone(),
        }
    }

    /// Unconstrained minimizer `anchor − H⁻¹ b` via Cholesky.
    pub fn minimizer(&self) -> Result<DVector<f64>> {
        let step = spd_solve(&self.h, &self.b)?;
        Ok(&self.anchor - step)
    }

    /// Multiplies the whole quadratic by `alpha`.
    pub fn scaled(&self, alpha: f64) -> QuadraticSurrogate {
        QuadraticSurrogate {
            h: &self.h * alpha,
            b: &self.b * alpha,
            c: self.c * alpha,
            anchor: self.anchor.clone(),
        }
    }
}

/// Anything MM can minimize: evaluable, and majorizable by a strongly convex
/// quadratic that is tangent at the anchor.
///
/// `majorize(a).c` must equal `value(a)`.
pub trait Majorize {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn majorize(&self, anchor: &DVector<f64>) -> Result<QuadraticSurrogate>;
}

impl Majorize for QuadraticSurrogate {
    fn dim(&self) -> usize {
        QuadraticSurrogate::dim(self)
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        dim_check("len(x)", self.dim(), x.len())?;
        Ok(QuadraticSurrogate::value(self, x))
    }

    fn majorize(&self, anchor: &DVector<f64>) -> Result<QuadraticSurrogate> {
        dim_check("len(anchor)", self.dim(), anchor.len())?;
        Ok(self.recentered(anchor))
    }
}

/// MAP objective for one filter step. Borrows everything; cheap to build.
#[derive(Debug, Clone, Copy)]
pub struct MapObjective<'a> {
    prior_mean: &'a DVector<f64>,
    prior_precision: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    sigma: &'a [f64],
    nu: &'a [f64],
}

impl<'a> MapObjective<'a> {
    pub fn new(
        prior_mean: &'a DVector<f64>,
        prior_precision: &'a DMatrix<f64>,
        c: &'a DMatrix<f64>,
        y: &'a DVector<f64>,
        sigma: &'a [f64],
        nu: &'a [f64],
    ) -> Result<Self> {
        let n = prior_mean.len();
        let m = c.nrows();
        dim_check("rows(P^-1)", n, prior_precision.nrows())?;
        dim_check("cols(P^-1)", n, prior_precision.ncols())?;
        dim_check("cols(C)", n, c.ncols())?;
        dim_check("len(y)", m, y.len())?;
        dim_check("len(sigma)", m, sigma.len())?;
        dim_check("len(nu)", m, nu.len())?;
        Ok(Self {
            prior_mean,
            prior_precision,
            c,
            y,
            sigma,
            nu,
        })
    }

    pub fn n_x(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        self.prior_mean
    }

    pub fn prior_precision(&self) -> &DMatrix<f64> {
        self.prior_precision
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        dim_check("len(x)", self.n_x(), x.len())
    }

    fn residual(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.c.row(i).transpose().dot(x) - self.y[i]
    }

    /// `mᵢ(x) = (1 + νᵢ) / (νᵢσᵢ² + (Cᵢx − yᵢ)²)`.
    pub fn weights(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.n_y())
            .map(|i| {
                let r = self.residual(i, x);
                (1.0 + self.nu[i]) / (self.nu[i] * self.sigma[i] * self.sigma[i] + r * r)
            })
            .collect())
    }

    fn prior_term(&self, x: &DVector<f64>) -> f64 {
        let d = x - self.prior_mean;
        d.dot(&(self.prior_precision * &d))
    }

    /// Value of the nonconvex measurement term alone.
    pub fn ncvx_value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        Ok((0..self.n_y())
            .map(|i| {
                let r = self.residual(i, x);
                let s2nu = self.sigma[i] * self.sigma[i] * self.nu[i];
                (1.0 + self.nu[i]) * (r * r / s2nu).ln_1p()
            })
            .sum())
    }

    pub fn ncvx_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.weights(x)?;
        let mut g = DVector::zeros(self.n_x());
        for (i, mi) in m.iter().enumerate() {
            let r = self.residual(i, x);
            g.axpy(2.0 * mi * r, &self.c.row(i).transpose(), 1.0);
        }
        Ok(g)
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let ncvx = self.ncvx_value(x)?;
        Ok(self.prior_term(x) + ncvx)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self.ncvx_gradient(x)?;
        let d = x - self.prior_mean;
        g.gemv(2.0, self.prior_precision, &d, 1.0);
        Ok(g)
    }

    /// Lipschitz constant of `∇F_ncvx`: `2 Σᵢ (νᵢ + 1)/(νᵢσᵢ²) ‖Cᵢ‖²`.
    pub fn lipschitz(&self) -> f64 {
        lipschitz_constant(self.c, self.sigma, self.nu)
    }

    /// Value and gradient at `x` from a single pass over the residuals, plus the weights `mᵢ(x)`.
    fn expand(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>, Vec<f64>)> {
        self.check(x)?;
        let d = x - self.prior_mean;
        let mut grad = self.prior_precision * &d;
        let mut value = d.dot(&grad);
        grad *= 2.0;
        let mut m = Vec::with_capacity(self.n_y());
        for i in 0..self.n_y() {
            let r = self.residual(i, x);
            let (s2, nu) = (self.sigma[i] * self.sigma[i], self.nu[i]);
            value += (1.0 + nu) * (r * r / (s2 * nu)).ln_1p();
            let mi = (1.0 + nu) / (nu * s2 + r * r);
            grad.axpy(2.0 * mi * r, &self.c.row(i).transpose(), 1.0);
            m.push(mi);
        }
        Ok((value, grad, m))
    }

    /// Tangent-log surrogate: prior term plus `Σ mᵢ (Cᵢx − yᵢ)²`.
    pub fn surrogate_log(&self, anchor: &DVector<f64>) -> Result<QuadraticSurrogate> {
        let (c, b, m) = self.expand(anchor)?;
        // H = 2 (P⁻¹ + Cᵀ diag(m) C), built symmetric
        let n = self.n_x();
        let mut h = DMatrix::zeros(n, n);
        for r in 0..n {
            for s in 0..=r {
                let cm: f64 = (0..self.n_y()).map(|i| m[i] * self.c[(i, r)] * self.c[(i, s)]).sum();
                let v = 2.0 * (cm + 0.5 * (self.prior_precision[(r, s)] + self.prior_precision[(s, r)]));
                h[(r, s)] = v;
                h[(s, r)] = v;
            }
        }
        Ok(QuadraticSurrogate {
            h,
            b,
            c,
            anchor: anchor.clone(),
        })
    }

    /// Descent-lemma surrogate: prior term plus a tangent plane and `(L/2)‖x − anchor‖²`.
    pub fn surrogate_smooth(&self, anchor: &DVector<f64>) -> Result<QuadraticSurrogate> {
        let (c, b, _) = self.expand(anchor)?;
        let mut h = self.prior_precision * 2.0;
        let l = self.lipschitz();
        for i in 0..self.n_x() {
            h[(i, i)] += l;
        }
        crate::linalg::symmetrize(&mut h);
        Ok(QuadraticSurrogate {
            h,
            b,
            c,
            anchor: anchor.clone(),
        })
    }

    pub fn surrogate(&self, kind: SurrogateKind, anchor: &DVector<f64>) -> Result<QuadraticSurrogate> {
        match kind {
            SurrogateKind::Log => self.surrogate_log(anchor),
            SurrogateKind::Smooth => self.surrogate_smooth(anchor),
        }
    }

    /// Pairs the objective with a surrogate family for use by MM.
    pub fn with_surrogate(self, kind: SurrogateKind) -> SurrogateObjective<'a> {
        SurrogateObjective {
            objective: self,
            kind,
        }
    }
}

pub fn lipschitz_constant(c: &DMatrix<f64>, sigma: &[f64], nu: &[f64]) -> f64 {
    2.0 * (0..c.nrows())
        .map(|i| (nu[i] + 1.0) / (nu[i] * sigma[i] * sigma[i]) * c.row(i).norm_squared())
        .sum::<f64>()
}

/// [`MapObjective`] with a fixed surrogate family.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateObjective<'a> {
    pub objective: MapObjective<'a>,
    pub kind: SurrogateKind,
}

impl Majorize for SurrogateObjective<'_> {
    fn dim(&self) -> usize {
        self.objective.n_x()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.objective.value(x)
    }

    fn majorize(&self, anchor: &DVector<f64>) -> Result<QuadraticSurrogate> {
        self.objective.surrogate(self.kind, anchor)
    }
}
