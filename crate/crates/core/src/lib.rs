//! Robust and constrained state estimation for linear models with
//! Student-t measurement noise.
//!
//! The filter computes the MAP estimate of each state by
//! majorization-minimization: the log-likelihood of the Student-t noise is
//! replaced by a quadratic upper bound, nonconvex constraints by convex
//! quadratic ones, and each resulting QCQP is solved by a barrier method.
//!
//! ```
//! use mmfilter::filter::{run_filter, FilterConfig};
//! use mmfilter::model::{simulate, StateSpaceModel};
//! use mmfilter::objective::SurrogateKind;
//! use nalgebra::{DMatrix, DVector};
//!
//! let model = StateSpaceModel::new(
//!     DMatrix::identity(2, 2),
//!     DMatrix::identity(2, 2),
//!     DMatrix::identity(2, 2) * 0.1,
//!     vec![0.5; 2],
//!     vec![3.0; 2],
//!     DVector::zeros(2),
//!     DMatrix::identity(2, 2),
//! )
//! .unwrap();
//! let traj = simulate(&model, &model.student_t_noise(), 20, 7).unwrap();
//! let trace = run_filter(&model, &FilterConfig::unconstrained(SurrogateKind::Log), &traj.measurements).unwrap();
//! assert_eq!(trace.len(), 20);
//! ```

pub mod constraints;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod qcqp;
mod serde_matrix;

pub use error::{Error, Result};

/// Shortest text that parses back to `v` exactly, in exponent form for very
/// small or very large magnitudes.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::format_float;

    #[test]
    fn format_float_round_trips() {
        for v in [0.0, -0.0, 1.5, 1e-12, 1.8189894035458565e-12, -3e20, 123456.789, f64::MIN_POSITIVE, 0.1 + 0.2] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(1e-12), "1e-12");
        assert_eq!(format_float(0.25), "0.25");
    }
}
