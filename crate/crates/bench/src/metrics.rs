use mmfilter::Error as CoreError;
use nalgebra::DVector;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::Result;

/// `sqrt(mean_k ‖x̂_k − x_k‖²)` over the coordinates in `indices` (all when `None`).
pub fn rmse(estimates: &[DVector<f64>], truth: &[DVector<f64>], indices: Option<&[usize]>) -> Result<f64> {
    if estimates.len() != truth.len() || estimates.is_empty() {
        return Err(CoreError::Dimension(format!(
            "rmse: {} estimates for {} true states",
            estimates.len(),
            truth.len()
        ))
        .into());
    }
    let mut total = 0.0;
    for (e, x) in estimates.iter().zip(truth) {
        if e.len() != x.len() {
            return Err(CoreError::Dimension(format!("rmse: state length {} vs {}", e.len(), x.len())).into());
        }
        total += match indices {
            Some(idx) => idx.iter().map(|&i| (e[i] - x[i]).powi(2)).sum::<f64>(),
            None => (e - x).norm_squared(),
        };
    }
    Ok((total / estimates.len() as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs with `a < b`.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Two-sided exact binomial p-value, ties dropped.
    pub p_value: f64,
}

/// Paired sign test of `a` against `b`.
pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Less) => wins += 1,
            Some(std::cmp::Ordering::Greater) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = (wins + losses) as u64;
    let p_value = if n == 0 {
        1.0
    } else {
        let dist = Binomial::new(0.5, n).expect("p = 0.5 is valid");
        let k = wins.min(losses) as u64;
        (2.0 * dist.cdf(k)).min(1.0)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}
