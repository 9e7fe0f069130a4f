use std::io::Write;

use nalgebra::DVector;

use super::GaussianBelief;
use crate::error::Result;

/// What one filter step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub posterior: GaussianBelief,
    pub mm_iters: usize,
    /// MAP objective at the returned estimate (NaN for filters without one).
    pub f_final: f64,
    /// MAP objective along the MM iterates, start point first.
    pub f_history: Vec<f64>,
    pub r_diag: DVector<f64>,
    pub wall_ns: u64,
    /// Largest constraint value at the estimate; −∞ when unconstrained.
    pub g_max: f64,
    pub constraint_active: bool,
}

impl StepRecord {
    pub(crate) fn plain(posterior: GaussianBelief, r_diag: DVector<f64>, wall_ns: u64) -> Self {
        Self {
            posterior,
            mm_iters: 0,
            f_final: f64::NAN,
            f_history: Vec::new(),
            r_diag,
            wall_ns,
            g_max: f64::NEG_INFINITY,
            constraint_active: false,
        }
    }
}

/// Per-step output of a filter run.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub steps: Vec<StepRecord>,
    /// Wall time of the whole run.
    pub total_ns: u64,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn estimates(&self) -> Vec<DVector<f64>> {
        self.steps.iter().map(|s| s.posterior.mean.clone()).collect()
    }

    /// Number of MM iterations whose objective rose by more than `slack`.
    pub fn descent_violations(&self, slack: f64) -> usize {
        self.steps
            .iter()
            .map(|s| s.f_history.windows(2).filter(|w| w[1] > w[0] + slack).count())
            .sum()
    }

    /// Largest constraint value over all steps.
    pub fn worst_constraint_value(&self) -> f64 {
        self.steps.iter().map(|s| s.g_max).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mm_iterations(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.mm_iters).collect()
    }

    /// CSV with columns
    /// `k, xhat_1..xhat_nx, P_diag_1..P_diag_nx, mm_iters, F_final, r_1..r_ny, wall_ns, g_resid_max`,
    /// where `g_resid_max` is the largest constraint violation (0 when all hold).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n_x = self.steps.first().map_or(0, |s| s.posterior.mean.len());
        let n_y = self.steps.first().map_or(0, |s| s.r_diag.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n_x).map(|i| format!("xhat_{i}")));
        header.extend((1..=n_x).map(|i| format!("P_diag_{i}")));
        header.push("mm_iters".into());
        header.push("F_final".into());
        header.extend((1..=n_y).map(|i| format!("r_{i}")));
        header.push("wall_ns".into());
        header.push("g_resid_max".into());
        w.write_record(&header)?;
        for (k, s) in self.steps.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(s.posterior.mean.iter().map(|v| crate::format_float(*v)));
            rec.extend(s.posterior.cov.diagonal().iter().map(|v| crate::format_float(*v)));
            rec.push(s.mm_iters.to_string());
            rec.push(crate::format_float(s.f_final));
            rec.extend(s.r_diag.iter().map(|v| crate::format_float(*v)));
            rec.push(s.wall_ns.to_string());
            rec.push(crate::format_float(s.g_max.max(0.0)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
