use mmfilter::model::{measure_states, rng_from_seed, simulate, sample_gaussian, Trajectory};
use nalgebra::{dmatrix, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::spec::ExperimentSpec;

/// How the true states of a run are produced.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    /// Simulate the filter's own linear model.
    #[default]
    Model,
    /// Constant-speed motion on a circle about the origin.
    Circle(CircleTruth),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleNoise {
    /// Noisy positions are rescaled back onto the circle.
    #[default]
    Reprojected,
    Raw,
}

/// Motion starting at `(0, radius)` heading along `+x`, i.e. clockwise.
///
/// With `process_var > 0` each state is perturbed independently by `Γw`,
/// `w ~ N(0, process_var·I₂)`, where `Γ` is the constant-velocity
/// noise-input matrix for step `dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleTruth {
    pub radius: f64,
    pub speed: f64,
    #[serde(default = "unit_dt")]
    pub dt: f64,
    pub position: [usize; 2],
    pub velocity: [usize; 2],
    #[serde(default)]
    pub process_var: f64,
    #[serde(default)]
    pub noise_mode: CircleNoise,
}

fn unit_dt() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn validate(&self, n_x: usize) -> Result<()> {
        let TruthSpec::Circle(c) = self else {
            return Ok(());
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(c.radius) || !positive(c.dt) || !(c.speed >= 0.0 && c.speed.is_finite()) {
            return Err(BenchError::Config("circle truth needs radius, dt > 0 and speed ≥ 0".into()));
        }
        if !(c.process_var >= 0.0 && c.process_var.is_finite()) {
            return Err(BenchError::Config("circle truth process_var must be ≥ 0".into()));
        }
        let idx = [c.position[0], c.position[1], c.velocity[0], c.velocity[1]];
        let distinct = (0..4).all(|i| (i + 1..4).all(|j| idx[i] != idx[j]));
        if !distinct || idx.iter().any(|&i| i >= n_x) {
            return Err(BenchError::Config("circle truth indices must be distinct state coordinates".into()));
        }
        Ok(())
    }
}

impl CircleTruth {
    /// Noise-free state at step `k` (0-based).
    pub fn state(&self, k: usize, n_x: usize) -> DVector<f64> {
        let omega = self.speed / self.radius;
        let th = omega * self.dt * k as f64;
        let mut x = DVector::zeros(n_x);
        x[self.position[0]] = self.radius * th.sin();
        x[self.position[1]] = self.radius * th.cos();
        x[self.velocity[0]] = self.speed * th.cos();
        x[self.velocity[1]] = -self.speed * th.sin();
        x
    }

    fn noise_input(&self) -> DMatrix<f64> {
        let dt = self.dt;
        dmatrix![0.5 * dt * dt; dt]
    }
}

/// Truth and measurements for the run with `seed`.
pub fn generate(spec: &ExperimentSpec, seed: u64) -> Result<Trajectory> {
    let model = &spec.model;
    match &spec.truth {
        TruthSpec::Model => Ok(simulate(model, &spec.noise, spec.steps, seed)?),
        TruthSpec::Circle(c) => {
            let mut rng = rng_from_seed(seed);
            let n_x = model.n_x();
            let g = c.noise_input();
            let w_sqrt = DMatrix::identity(2, 2) * c.process_var.sqrt();
            let zero = DVector::zeros(2);
            let mut states = Vec::with_capacity(spec.steps);
            for k in 0..spec.steps {
                let mut x = c.state(k, n_x);
                if c.process_var > 0.0 {
                    let w = sample_gaussian(&zero, &w_sqrt, &mut rng);
                    for axis in 0..2 {
                        x[c.position[axis]] += g[0] * w[axis];
                        x[c.velocity[axis]] += g[1] * w[axis];
                    }
                    if c.noise_mode == CircleNoise::Reprojected {
                        let (a, b) = (x[c.position[0]], x[c.position[1]]);
                        let r = a.hypot(b);
                        if r > 0.0 {
                            x[c.position[0]] = a * c.radius / r;
                            x[c.position[1]] = b * c.radius / r;
                        }
                    }
                }
                states.push(x);
            }
            let measurements = measure_states(model.c(), &spec.noise, &states, &mut rng);
            Ok(Trajectory::new(states, measurements)?)
        }
    }
}
