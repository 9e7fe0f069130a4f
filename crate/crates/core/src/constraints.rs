//! Scalar state constraints `g(x) ≤ 0` and their convex quadratic majorizers.
//!
//! Convex kinds (linear, convex quadratic, outer annulus bound) pass through
//! to the QCQP unchanged. Nonconvex kinds (inner annulus bound, indefinite
//! quadratic) are replaced at each MM iteration by
//!
//! ```text
//! g̃(x; a) = g(a) + ∇g(a)ᵀ(x − a) + (G/2)‖x − a‖²
//! ```
//!
//! where `G` bounds the curvature of `g`. For quadratic `g` we use the exact
//! value `G = 2·ρ(M)`, so `g̃ ≥ g` everywhere and `g̃ = g`, `∇g̃ = ∇g` at `a`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{check_psd, is_symmetric, spectral_radius, symmetrized};
use crate::serde_matrix;

/// Slack below which a constraint value counts as satisfied.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Offset applied to a point sitting exactly at an annulus centre before it
/// is pushed out radially, so the projection direction is deterministic.
pub const TIE_BREAK_OFFSET: f64 = 1e-9;

/// Convex quadratic `g(x) = dᵀ M d + qᵀ d + r` with `d = x − center`, `M ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexQuadConstraint {
    pub m: DMatrix<f64>,
    pub q: DVector<f64>,
    pub r: f64,
    pub center: DVector<f64>,
}

impl ConvexQuadConstraint {
    /// `xᵀ M x + qᵀ x + r ≤ 0`.
    pub fn new(m: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        let center = DVector::zeros(q.len());
        Self::about(center, m, q, r)
    }

    pub fn about(center: DVector<f64>, m: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        let n = center.len();
        dim_check("rows(M)", n, m.nrows())?;
        dim_check("len(q)", n, q.len())?;
        check_psd("M", &m, 1e-10)?;
        if !r.is_finite() || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("constraint coefficients must be finite".into()));
        }
        Ok(Self {
            m: symmetrized(m),
            q,
            r,
            center,
        })
    }

    /// `aᵀ x − b ≤ 0`.
    pub fn linear(a: DVector<f64>, b: f64) -> Self {
        let n = a.len();
        Self {
            m: DMatrix::zeros(n, n),
            q: a,
            r: -b,
            center: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.center;
        d.dot(&(&self.m * &d)) + self.q.dot(&d) + self.r
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.center;
        &self.m * d * 2.0 + &self.q
    }

    /// Same function expanded about a new centre.
    pub fn recentered(&self, center: &DVector<f64>) -> ConvexQuadConstraint {
        ConvexQuadConstraint {
            m: self.m.clone(),
            q: self.gradient(center),
            r: self.value(center),
            center: center.clone(),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.m.iter().all(|v| *v == 0.0)
    }
}

/// Parameters of one constraint, as written in configuration documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintKind {
    /// `aᵀx = b`, handled as the pair `aᵀx ≤ b`, `−aᵀx ≤ −b`.
    LinearEq {
        #[serde(with = "serde_matrix::vector")]
        a: DVector<f64>,
        b: f64,
    },
    /// `aᵀx ≤ b`.
    LinearIneq {
        #[serde(with = "serde_matrix::vector")]
        a: DVector<f64>,
        b: f64,
    },
    /// `xᵀMx + qᵀx + r ≤ 0` with `M ⪰ 0`.
    ConvexQuad {
        #[serde(with = "serde_matrix::matrix")]
        m: DMatrix<f64>,
        #[serde(with = "serde_matrix::vector")]
        q: DVector<f64>,
        r: f64,
    },
    /// `‖x_s‖² ≤ (ρ + ε)²` over the coordinates `indices` (0-based).
    AnnulusOuter {
        indices: Vec<usize>,
        radius: f64,
        eps: f64,
    },
    /// `(ρ − ε)² − ‖x_s‖² ≤ 0`; concave, so the feasible set is nonconvex.
    AnnulusInner {
        indices: Vec<usize>,
        radius: f64,
        eps: f64,
    },
    /// `xᵀDx ≤ 0` with `D` symmetric and possibly indefinite.
    IndefQuad {
        #[serde(with = "serde_matrix::matrix")]
        d: DMatrix<f64>,
    },
}

/// A validated constraint with its curvature bound `G`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintKind", into = "ConstraintKind")]
pub struct Constraint {
    kind: ConstraintKind,
    curvature_bound: f64,
}

impl TryFrom<ConstraintKind> for Constraint {
    type Error = Error;

    fn try_from(kind: ConstraintKind) -> Result<Self> {
        Constraint::new(kind)
    }
}

impl From<Constraint> for ConstraintKind {
    fn from(c: Constraint) -> Self {
        c.kind
    }
}

fn check_annulus(indices: &[usize], radius: f64, eps: f64) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::Parameter("annulus needs at least one index".into()));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != indices.len() {
        return Err(Error::Parameter("annulus indices must be distinct".into()));
    }
    if !(eps > 0.0 && radius > eps && radius.is_finite()) {
        return Err(Error::Parameter(format!(
            "annulus requires radius > eps > 0, got radius {radius}, eps {eps}"
        )));
    }
    Ok(())
}

fn check_linear(a: &DVector<f64>, b: f64) -> Result<()> {
    if a.is_empty() || a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Parameter("linear constraint must be finite and non-empty".into()));
    }
    if a.norm() == 0.0 {
        return Err(Error::Parameter("linear constraint normal must be nonzero".into()));
    }
    Ok(())
}

impl Constraint {
    pub fn new(kind: ConstraintKind) -> Result<Self> {
        let curvature_bound = match &kind {
            ConstraintKind::LinearEq { a, b } | ConstraintKind::LinearIneq { a, b } => {
                check_linear(a, *b)?;
                0.0
            }
            ConstraintKind::ConvexQuad { m, q, r } => {
                dim_check("len(q)", m.nrows(), q.len())?;
                check_psd("M", m, 1e-10)?;
                if !r.is_finite() {
                    return Err(Error::Parameter("r must be finite".into()));
                }
                2.0 * spectral_radius(m)
            }
            ConstraintKind::AnnulusOuter {
                indices,
                radius,
                eps,
            }
            | ConstraintKind::AnnulusInner {
                indices,
                radius,
                eps,
            } => {
                check_annulus(indices, *radius, *eps)?;
                2.0
            }
            ConstraintKind::IndefQuad { d } => {
                if !d.is_square() || d.nrows() == 0 {
                    return Err(Error::Dimension("D must be square and non-empty".into()));
                }
                if !is_symmetric(d, 1e-9) {
                    return Err(Error::Parameter("D must be symmetric".into()));
                }
                2.0 * spectral_radius(d)
            }
        };
        let kind = match kind {
            ConstraintKind::ConvexQuad { m, q, r } => ConstraintKind::ConvexQuad {
                m: symmetrized(m),
                q,
                r,
            },
            ConstraintKind::IndefQuad { d } => ConstraintKind::IndefQuad { d: symmetrized(d) },
            other => other,
        };
        Ok(Self {
            kind,
            curvature_bound,
        })
    }

    pub fn linear_eq(a: DVector<f64>, b: f64) -> Result<Self> {
        Self::new(ConstraintKind::LinearEq { a, b })
    }

    pub fn linear_ineq(a: DVector<f64>, b: f64) -> Result<Self> {
        Self::new(ConstraintKind::LinearIneq { a, b })
    }

    pub fn convex_quad(m: DMatrix<f64>, q: DVector<f64>, r: f64) -> Result<Self> {
        Self::new(ConstraintKind::ConvexQuad { m, q, r })
    }

    pub fn indef_quad(d: DMatrix<f64>) -> Result<Self> {
        Self::new(ConstraintKind::IndefQuad { d })
    }

    pub fn annulus_outer(indices: Vec<usize>, radius: f64, eps: f64) -> Result<Self> {
        Self::new(ConstraintKind::AnnulusOuter {
            indices,
            radius,
            eps,
        })
    }

    pub fn annulus_inner(indices: Vec<usize>, radius: f64, eps: f64) -> Result<Self> {
        Self::new(ConstraintKind::AnnulusInner {
            indices,
            radius,
            eps,
        })
    }

    /// Both sides of the band `(ρ − ε)² ≤ ‖x_s‖² ≤ (ρ + ε)²`.
    pub fn annulus(indices: Vec<usize>, radius: f64, eps: f64) -> Result<Vec<Self>> {
        Ok(vec![
            Self::annulus_inner(indices.clone(), radius, eps)?,
            Self::annulus_outer(indices, radius, eps)?,
        ])
    }

    /// `1ᵀx = 1`, `x ≥ 0` on `n` coordinates.
    pub fn simplex(n: usize) -> Result<Vec<Self>> {
        let mut out = vec![Self::linear_eq(DVector::from_element(n, 1.0), 1.0)?];
        for i in 0..n {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            out.push(Self::linear_ineq(a, 0.0)?);
        }
        Ok(out)
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    /// Lipschitz constant `G` of `∇g`.
    pub fn curvature_bound(&self) -> f64 {
        self.curvature_bound
    }

    pub fn is_equality(&self) -> bool {
        matches!(self.kind, ConstraintKind::LinearEq { .. })
    }

    /// Convex kinds are handed to the QCQP as they are.
    pub fn is_convex(&self) -> bool {
        !matches!(
            self.kind,
            ConstraintKind::AnnulusInner { .. } | ConstraintKind::IndefQuad { .. }
        )
    }

    /// `(a, b)` of a linear equality.
    pub fn equality(&self) -> Option<(&DVector<f64>, f64)> {
        match &self.kind {
            ConstraintKind::LinearEq { a, b } => Some((a, *b)),
            _ => None,
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        match &self.kind {
            ConstraintKind::LinearEq { a, .. } | ConstraintKind::LinearIneq { a, .. } => {
                dim_check("constraint dimension", a.len(), n)
            }
            ConstraintKind::ConvexQuad { m, .. } => dim_check("constraint dimension", m.nrows(), n),
            ConstraintKind::IndefQuad { d } => dim_check("constraint dimension", d.nrows(), n),
            ConstraintKind::AnnulusOuter { indices, .. }
            | ConstraintKind::AnnulusInner { indices, .. } => {
                match indices.iter().find(|i| **i >= n) {
                    Some(i) => Err(Error::Dimension(format!(
                        "annulus index {i} out of range for state of dimension {n}"
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    /// `g(x)`; for equalities this is the violation `|aᵀx − b|`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(match &self.kind {
            ConstraintKind::LinearEq { a, b } => (a.dot(x) - b).abs(),
            ConstraintKind::LinearIneq { a, b } => a.dot(x) - b,
            ConstraintKind::ConvexQuad { m, q, r } => x.dot(&(m * x)) + q.dot(x) + r,
            ConstraintKind::AnnulusOuter {
                indices,
                radius,
                eps,
            } => sub_norm_sq(x, indices) - (radius + eps).powi(2),
            ConstraintKind::AnnulusInner {
                indices,
                radius,
                eps,
            } => (radius - eps).powi(2) - sub_norm_sq(x, indices),
            ConstraintKind::IndefQuad { d } => x.dot(&(d * x)),
        })
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(match &self.kind {
            ConstraintKind::LinearEq { a, b } => {
                if a.dot(x) - b < 0.0 {
                    -a
                } else {
                    a.clone()
                }
            }
            ConstraintKind::LinearIneq { a, .. } => a.clone(),
            ConstraintKind::ConvexQuad { m, q, .. } => m * x * 2.0 + q,
            ConstraintKind::AnnulusOuter { indices, .. } => sub_vector(x, indices) * 2.0,
            ConstraintKind::AnnulusInner { indices, .. } => sub_vector(x, indices) * -2.0,
            ConstraintKind::IndefQuad { d } => d * x * 2.0,
        })
    }

    /// The convex kinds written as a [`ConvexQuadConstraint`] about the origin.
    pub fn as_convex_quad(&self, n: usize) -> Option<ConvexQuadConstraint> {
        match &self.kind {
            ConstraintKind::LinearIneq { a, b } => Some(ConvexQuadConstraint::linear(a.clone(), *b)),
            ConstraintKind::ConvexQuad { m, q, r } => Some(ConvexQuadConstraint {
                m: m.clone(),
                q: q.clone(),
                r: *r,
                center: DVector::zeros(m.nrows()),
            }),
            ConstraintKind::AnnulusOuter {
                indices,
                radius,
                eps,
            } => {
                let mut m = DMatrix::zeros(n, n);
                for &i in indices {
                    m[(i, i)] = 1.0;
                }
                Some(ConvexQuadConstraint {
                    m,
                    q: DVector::zeros(n),
                    r: -(radius + eps).powi(2),
                    center: DVector::zeros(n),
                })
            }
            _ => None,
        }
    }

    /// Convex quadratic upper bound of `g`, tangent at `anchor`.
    ///
    /// Convex kinds are returned unchanged (re-expanded about `anchor`).
    /// Equalities have no inequality majorizer and are rejected.
    pub fn majorize(&self, anchor: &DVector<f64>) -> Result<ConvexQuadConstraint> {
        let n = anchor.len();
        self.check_dim(n)?;
        if self.is_equality() {
            return Err(Error::Parameter(
                "linear equalities are passed to the QCQP as equalities, not majorized".into(),
            ));
        }
        if let Some(cq) = self.as_convex_quad(n) {
            return Ok(cq.recentered(anchor));
        }
        let half_g = 0.5 * self.curvature_bound;
        Ok(ConvexQuadConstraint {
            m: DMatrix::from_diagonal_element(n, n, half_g),
            q: self.gradient(anchor)?,
            r: self.eval(anchor)?,
            center: anchor.clone(),
        })
    }

    /// Euclidean projection of `x` onto `{g ≤ 0}` for this constraint alone.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(match &self.kind {
            ConstraintKind::LinearEq { a, b } => x - a * ((a.dot(x) - b) / a.norm_squared()),
            ConstraintKind::LinearIneq { a, b } => {
                let v = a.dot(x) - b;
                if v <= 0.0 {
                    x.clone()
                } else {
                    x - a * (v / a.norm_squared())
                }
            }
            ConstraintKind::AnnulusOuter {
                indices,
                radius,
                eps,
            } => {
                let r = sub_norm_sq(x, indices).sqrt();
                if r <= radius + eps {
                    x.clone()
                } else {
                    radial_rescale(x, indices, radius + eps)
                }
            }
            ConstraintKind::AnnulusInner {
                indices,
                radius,
                eps,
            } => {
                let r = sub_norm_sq(x, indices).sqrt();
                if r >= radius - eps {
                    x.clone()
                } else {
                    radial_rescale(x, indices, radius - eps)
                }
            }
            ConstraintKind::ConvexQuad { m, q, r } => project_quadratic(m, q, *r, x),
            ConstraintKind::IndefQuad { d } => {
                project_quadratic(d, &DVector::zeros(x.len()), 0.0, x)
            }
        })
    }
}

fn sub_norm_sq(x: &DVector<f64>, indices: &[usize]) -> f64 {
    indices.iter().map(|&i| x[i] * x[i]).sum()
}

/// `x` restricted to `indices`, zero elsewhere.
fn sub_vector(x: &DVector<f64>, indices: &[usize]) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    for &i in indices {
        out[i] = x[i];
    }
    out
}

/// Scales the `indices` block of `x` to have norm `target`.
fn radial_rescale(x: &DVector<f64>, indices: &[usize], target: f64) -> DVector<f64> {
    let mut y = x.clone();
    if sub_norm_sq(&y, indices) == 0.0 {
        y[indices[0]] += TIE_BREAK_OFFSET;
    }
    let scale = target / sub_norm_sq(&y, indices).sqrt();
    for &i in indices {
        y[i] *= scale;
    }
    y
}

/// Nearest point to `z` with `xᵀMx + qᵀx + r ≤ 0` for symmetric `M` (any inertia).
///
/// Stationarity gives `x(λ) = (I + 2λM)⁻¹(z − λq)` for `λ ≥ 0` with
/// `I + 2λM ≻ 0`; `φ(λ) = g(x(λ))` is decreasing there and is bisected to zero.
fn project_quadratic(m: &DMatrix<f64>, q: &DVector<f64>, r: f64, z: &DVector<f64>) -> DVector<f64> {
    let g = |x: &DVector<f64>| x.dot(&(m * x)) + q.dot(x) + r;
    if g(z) <= 0.0 {
        return z.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let v = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let zt = v.tr_mul(z);
    let qt = v.tr_mul(q);
    let x_of = |t: f64| -> DVector<f64> {
        let xt = DVector::from_iterator(
            zt.len(),
            (0..zt.len()).map(|i| (zt[i] - t * qt[i]) / (1.0 + 2.0 * t * lam[i])),
        );
        v * xt
    };
    let lam_min = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = 0.0;
    let mut hi;
    if lam_min < 0.0 {
        hi = 0.5 / (-lam_min) * (1.0 - 1e-12);
        if g(&x_of(hi)) > 0.0 {
            // hard case: move along the most negative curvature direction
            let xh = x_of(hi);
            let idx = (0..lam.len())
                .min_by(|a, b| lam[*a].total_cmp(&lam[*b]))
                .unwrap_or(0);
            let dir = v.column(idx).into_owned();
            let a2 = lam[idx];
            let a1 = 2.0 * dir.dot(&(m * &xh)) + q.dot(&dir);
            let a0 = g(&xh);
            let disc = (a1 * a1 - 4.0 * a2 * a0).max(0.0).sqrt();
            let t1 = (-a1 + disc) / (2.0 * a2);
            let t2 = (-a1 - disc) / (2.0 * a2);
            let tau = if t1.abs() < t2.abs() { t1 } else { t2 };
            return xh + dir * tau;
        }
    } else {
        hi = 1.0;
        let mut guard = 0;
        while g(&x_of(hi)) > 0.0 && guard < 200 {
            lo = hi;
            hi *= 2.0;
            guard += 1;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(&x_of(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x_of(hi)
}
