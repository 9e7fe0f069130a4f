use std::collections::HashSet;
use std::f64::consts::PI;

use mmfilter::constraints::Constraint;
use mmfilter::filter::{FilterConfig, NoiseAdaptation, MIN_PARTICLES};
use mmfilter::model::{Contamination, MeasurementNoise, StateSpaceModel};
use mmfilter::objective::SurrogateKind;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::truth::{CircleNoise, CircleTruth, TruthSpec};

/// Version written into every CSV header and accepted in configs.
pub const SCHEMA_VERSION: u32 = 1;

/// Student-t scale giving variance 1.09 at `ν = 3`.
pub const MATCHED_SIGMA2: f64 = 1.09 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Exp1Rotation,
    Exp2CircularRoad,
    Custom,
}

/// MM and QCQP tuning shared by every MM-based filter of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub mm_tol: f64,
    pub mm_max_iter: usize,
    pub qcqp_tol: f64,
    pub qcqp_max_iter: usize,
    pub noise_adaptation: NoiseAdaptation,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            mm_tol: d.mm_tol,
            mm_max_iter: d.mm_max_iter,
            qcqp_tol: d.qcqp_tol,
            qcqp_max_iter: d.qcqp_max_iter,
            noise_adaptation: d.noise_adaptation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterKind {
    /// The MM filter, optionally with the experiment's constraints.
    Tfmm {
        surrogate: SurrogateKind,
        #[serde(default)]
        constrained: bool,
    },
    /// Fixed-`R` Kalman filter. `r_diag` defaults to the generating noise variance.
    Kalman {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r_diag: Option<Vec<f64>>,
    },
    /// Unconstrained MM filter with each estimate projected onto the constraints.
    Projection { surrogate: SurrogateKind },
    /// Bootstrap particle filter with Student-t likelihood.
    Particle { n_particles: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub label: String,
    #[serde(flatten)]
    pub kind: FilterKind,
}

impl FilterSpec {
    pub fn new(label: &str, kind: FilterKind) -> Self {
        Self {
            label: label.to_string(),
            kind,
        }
    }
}

/// A subset of state coordinates scored together. `None` means all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmseGroup {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

/// State coordinates used for trajectory and velocity-arrow plot data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotAxes {
    pub position: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub scenario: Scenario,
    pub model: StateSpaceModel,
    /// Law of the simulated measurement noise.
    pub noise: MeasurementNoise,
    #[serde(default)]
    pub truth: TruthSpec,
    #[serde(default)]
    pub constraints: Vec<Constraint>,
    #[serde(default)]
    pub solver: SolverSettings,
    pub filters: Vec<FilterSpec>,
    pub steps: usize,
    pub n_runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub rmse_groups: Vec<RmseGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotAxes>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Filter settings for an MM-based filter of this experiment.
    pub fn filter_config(&self, surrogate: SurrogateKind, constrained: bool) -> FilterConfig {
        FilterConfig {
            surrogate,
            constrained,
            constraints: self.constraints.clone(),
            mm_tol: self.solver.mm_tol,
            mm_max_iter: self.solver.mm_max_iter,
            qcqp_tol: self.solver.qcqp_tol,
            qcqp_max_iter: self.solver.qcqp_max_iter,
            noise_adaptation: self.solver.noise_adaptation,
        }
    }

    /// Diagonal of the Kalman `R` for `r_diag`, defaulting to the noise variance.
    pub fn kalman_r(&self, r_diag: Option<&[f64]>) -> DMatrix<f64> {
        let diag = match r_diag {
            Some(r) => DVector::from_column_slice(r),
            None => DVector::from_fn(self.model.n_y(), |i, _| self.noise.variance(i)),
        };
        DMatrix::from_diagonal(&diag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.steps == 0 {
            return Err(config_err("steps must be at least 1"));
        }
        if self.n_runs == 0 {
            return Err(config_err("n_runs must be at least 1"));
        }
        if self.filters.is_empty() {
            return Err(config_err("filter list is empty"));
        }
        if self.rmse_groups.is_empty() {
            return Err(config_err("rmse_groups is empty"));
        }
        let n_x = self.model.n_x();
        let n_y = self.model.n_y();
        self.noise.validate(n_y).map_err(|e| config_err(e.to_string()))?;
        self.truth.validate(n_x)?;
        for c in &self.constraints {
            c.check_dim(n_x).map_err(|e| config_err(e.to_string()))?;
        }
        for g in &self.rmse_groups {
            if let Some(idx) = &g.indices {
                if idx.is_empty() || idx.iter().any(|&i| i >= n_x) {
                    return Err(config_err(format!("rmse group {:?} has bad indices", g.name)));
                }
            }
        }
        if let Some(p) = &self.plot {
            let axes = p.position.iter().chain(p.velocity.iter().flatten());
            if axes.into_iter().any(|&i| i >= n_x) {
                return Err(config_err("plot axes out of range"));
            }
        }
        let mut labels = HashSet::new();
        for f in &self.filters {
            if !labels.insert(f.label.as_str()) {
                return Err(config_err(format!("duplicate filter label {:?}", f.label)));
            }
            self.validate_filter(f)?;
        }
        Ok(())
    }

    fn validate_filter(&self, f: &FilterSpec) -> Result<()> {
        let n_x = self.model.n_x();
        let needs_constraints = |label: &str| -> Result<()> {
            if self.constraints.is_empty() {
                return Err(config_err(format!("filter {label:?} needs constraints")));
            }
            Ok(())
        };
        match &f.kind {
            FilterKind::Tfmm { surrogate, constrained } => {
                if *constrained {
                    needs_constraints(&f.label)?;
                }
                self.filter_config(*surrogate, *constrained)
                    .validate(n_x)
                    .map_err(|e| config_err(e.to_string()))?;
            }
            FilterKind::Projection { surrogate } => {
                needs_constraints(&f.label)?;
                self.filter_config(*surrogate, false)
                    .validate(n_x)
                    .map_err(|e| config_err(e.to_string()))?;
            }
            FilterKind::Kalman { r_diag } => {
                if let Some(r) = r_diag {
                    if r.len() != self.model.n_y() || r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                        return Err(config_err(format!("filter {:?}: bad r_diag", f.label)));
                    }
                }
            }
            FilterKind::Particle { n_particles } => {
                if *n_particles < MIN_PARTICLES {
                    return Err(config_err(format!(
                        "filter {:?}: at least {MIN_PARTICLES} particles required",
                        f.label
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rotation tracking with contaminated Gaussian measurement noise.
pub fn build_exp1() -> ExperimentSpec {
    let th = 0.2 * PI;
    let sigma = MATCHED_SIGMA2.sqrt();
    let model = StateSpaceModel::new(
        dmatrix![th.cos(), th.sin(); -th.sin(), th.cos()],
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2) * 0.1,
        vec![sigma; 2],
        vec![3.0; 2],
        DVector::zeros(2),
        DMatrix::identity(2, 2),
    )
    .expect("static model is valid");
    let noise = MeasurementNoise::contaminated_iid(
        2,
        Contamination {
            p_outlier: 0.1,
            var_nominal: 0.1,
            var_outlier: 10.0,
        },
    );
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: "exp1".into(),
        scenario: Scenario::Exp1Rotation,
        model,
        noise,
        truth: TruthSpec::Model,
        constraints: Vec::new(),
        solver: SolverSettings::default(),
        filters: vec![
            FilterSpec::new(
                "tfmm_log",
                FilterKind::Tfmm {
                    surrogate: SurrogateKind::Log,
                    constrained: false,
                },
            ),
            FilterSpec::new(
                "tfmm_smooth",
                FilterKind::Tfmm {
                    surrogate: SurrogateKind::Smooth,
                    constrained: false,
                },
            ),
            FilterSpec::new("kf", FilterKind::Kalman { r_diag: None }),
            FilterSpec::new("pf", FilterKind::Particle { n_particles: 10_000 }),
        ],
        steps: 1000,
        n_runs: 100,
        base_seed: 1,
        rmse_groups: vec![RmseGroup {
            name: "state".into(),
            indices: None,
        }],
        plot: Some(PlotAxes {
            position: [0, 1],
            velocity: None,
        }),
    }
}

/// Vehicle on a circular road tracked with a kinematic model and an annulus constraint.
pub fn build_exp2() -> ExperimentSpec {
    let dt = 1.0;
    let gamma = dmatrix![
        0.5 * dt * dt, 0.0;
        dt, 0.0;
        0.0, 0.5 * dt * dt;
        0.0, dt
    ];
    let sigma = MATCHED_SIGMA2.sqrt();
    let model = StateSpaceModel::new(
        dmatrix![
            1.0, dt, 0.0, 0.0;
            0.0, 1.0, 0.0, 0.0;
            0.0, 0.0, 1.0, dt;
            0.0, 0.0, 0.0, 1.0
        ],
        dmatrix![1.0, 0.0, 0.0, 0.0; 0.0, 0.0, 1.0, 0.0],
        &gamma * gamma.transpose() * 1.5,
        vec![sigma; 2],
        vec![3.0; 2],
        dvector![0.0, 4.0, 100.0, 0.0],
        DMatrix::identity(4, 4),
    )
    .expect("static model is valid");
    let noise = MeasurementNoise::StudentT {
        sigma: vec![sigma; 2],
        nu: vec![3.0; 2],
    };
    let log = SurrogateKind::Log;
    ExperimentSpec {
        schema_version: SCHEMA_VERSION,
        name: "exp2".into(),
        scenario: Scenario::Exp2CircularRoad,
        model,
        noise,
        truth: TruthSpec::Circle(CircleTruth {
            radius: 100.0,
            speed: 4.0,
            dt,
            position: [0, 2],
            velocity: [1, 3],
            process_var: 0.0,
            noise_mode: CircleNoise::Reprojected,
        }),
        constraints: Constraint::annulus(vec![0, 2], 100.0, 0.1).expect("static annulus is valid"),
        solver: SolverSettings::default(),
        filters: vec![
            FilterSpec::new(
                "constrained",
                FilterKind::Tfmm {
                    surrogate: log,
                    constrained: true,
                },
            ),
            FilterSpec::new(
                "unconstrained",
                FilterKind::Tfmm {
                    surrogate: log,
                    constrained: false,
                },
            ),
            FilterSpec::new("projection", FilterKind::Projection { surrogate: log }),
        ],
        steps: 35,
        n_runs: 50,
        base_seed: 1,
        rmse_groups: vec![
            RmseGroup {
                name: "position".into(),
                indices: Some(vec![0, 2]),
            },
            RmseGroup {
                name: "velocity".into(),
                indices: Some(vec![1, 3]),
            },
        ],
        plot: Some(PlotAxes {
            position: [0, 2],
            velocity: Some([1, 3]),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_validate() {
        build_exp1().validate().unwrap();
        build_exp2().validate().unwrap();
    }

    #[test]
    fn rejects_empty_filters_and_zero_steps() {
        let mut s = build_exp1();
        s.filters.clear();
        assert!(matches!(s.validate(), Err(BenchError::Config(_))));
        let mut s = build_exp1();
        s.steps = 0;
        assert!(s.validate().is_err());
        let mut s = build_exp1();
        s.n_runs = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn constrained_filter_needs_constraints() {
        let mut s = build_exp2();
        s.constraints.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn rejects_duplicate_labels_and_few_particles() {
        let mut s = build_exp1();
        s.filters[1].label = "tfmm_log".into();
        assert!(s.validate().is_err());
        let mut s = build_exp1();
        s.filters[3].kind = FilterKind::Particle { n_particles: 10 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn kalman_r_defaults_to_noise_variance() {
        let s = build_exp1();
        let r = s.kalman_r(None);
        assert!((r[(0, 0)] - 1.09).abs() < 1e-12);
        assert!((build_exp2().kalman_r(None)[(1, 1)] - 1.09).abs() < 1e-12);
    }

    #[test]
    fn filter_kind_json_is_flat() {
        let f = FilterSpec::new("pf", FilterKind::Particle { n_particles: 500 });
        let text = serde_json::to_string(&f).unwrap();
        assert_eq!(text, r#"{"label":"pf","kind":"particle","n_particles":500}"#);
        assert_eq!(serde_json::from_str::<FilterSpec>(&text).unwrap(), f);
    }
}
