//! Linear state-space model with Gaussian process noise and independent
//! univariate Student-t measurement noise, plus a seeded trajectory simulator.
//!
//! ```text
//! x_{k+1} = A x_k + w_k,   w_k ~ N(0, Q)
//! y_k     = C x_k + v_k,   v_{k,i} ~ T(0, σ_i, ν_i)
//! x_1     ~ N(x̂_0, P_0)
//! ```

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{check_psd, psd_sqrt};
use crate::serde_matrix;

/// The RNG used everywhere randomness is needed. Seeded explicitly so every
/// Monte-Carlo run is reproducible in isolation.
pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Log-density of the univariate Student-t distribution with location 0,
/// scale `sigma` and `nu` degrees of freedom.
pub fn student_t_logpdf(v: f64, sigma: f64, nu: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Parameter(format!("nu must be positive, got {nu}")));
    }
    Ok(student_t_logpdf_unchecked(v, sigma, nu))
}

pub(crate) fn student_t_log_norm(sigma: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (std::f64::consts::PI * nu).ln()
        - sigma.ln()
}

pub(crate) fn student_t_logpdf_unchecked(v: f64, sigma: f64, nu: f64) -> f64 {
    let u = v * v / (nu * sigma * sigma);
    student_t_log_norm(sigma, nu) - 0.5 * (nu + 1.0) * u.ln_1p()
}

/// Linear state-space model `θ = {A, C, Q, σ, ν, x̂_0, P_0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    sigma: Vec<f64>,
    nu: Vec<f64>,
    x0_mean: DVector<f64>,
    p0: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Validates dimensions and parameter domains.
    ///
    /// `P_0` is only required to be positive semidefinite here so that
    /// noiseless simulations can be expressed; the filters themselves
    /// regularize a singular prior before inverting it.
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        sigma: Vec<f64>,
        nu: Vec<f64>,
        x0_mean: DVector<f64>,
        p0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension("A must be square and non-empty".into()));
        }
        let m = c.nrows();
        if m == 0 {
            return Err(Error::Dimension("C must have at least one row".into()));
        }
        dim_check("cols(C)", n, c.ncols())?;
        dim_check("rows(Q)", n, q.nrows())?;
        dim_check("rows(P0)", n, p0.nrows())?;
        dim_check("len(x0_mean)", n, x0_mean.len())?;
        dim_check("len(sigma)", m, sigma.len())?;
        dim_check("len(nu)", m, nu.len())?;
        if a.iter().chain(c.iter()).chain(x0_mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("A, C and x0_mean must be finite".into()));
        }
        check_psd("Q", &q, 1e-10)?;
        check_psd("P0", &p0, 1e-10)?;
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter(format!("sigma must be positive, got {s}")));
        }
        if let Some(v) = nu.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!("nu must be positive, got {v}")));
        }
        Ok(Self {
            a,
            c,
            q,
            sigma,
            nu,
            x0_mean,
            p0,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }

    pub fn p0(&self) -> &DMatrix<f64> {
        &self.p0
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Same model with different Student-t parameters.
    pub fn with_noise_params(&self, sigma: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.c.clone(),
            self.q.clone(),
            sigma,
            nu,
            self.x0_mean.clone(),
            self.p0.clone(),
        )
    }

    /// Same model with a different initial belief.
    pub fn with_initial(&self, x0_mean: DVector<f64>, p0: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.c.clone(),
            self.q.clone(),
            self.sigma.clone(),
            self.nu.clone(),
            x0_mean,
            p0,
        )
    }

    /// Measurement-noise law the filter assumes.
    pub fn student_t_noise(&self) -> MeasurementNoise {
        MeasurementNoise::StudentT {
            sigma: self.sigma.clone(),
            nu: self.nu.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    #[serde(with = "serde_matrix::matrix")]
    a: DMatrix<f64>,
    #[serde(with = "serde_matrix::matrix")]
    c: DMatrix<f64>,
    #[serde(with = "serde_matrix::matrix")]
    q: DMatrix<f64>,
    sigma: Vec<f64>,
    nu: Vec<f64>,
    #[serde(with = "serde_matrix::vector")]
    x0_mean: DVector<f64>,
    #[serde(with = "serde_matrix::matrix")]
    p0: DMatrix<f64>,
}

impl TryFrom<ModelDoc> for StateSpaceModel {
    type Error = Error;

    fn try_from(d: ModelDoc) -> Result<Self> {
        StateSpaceModel::new(d.a, d.c, d.q, d.sigma, d.nu, d.x0_mean, d.p0)
    }
}

impl From<StateSpaceModel> for ModelDoc {
    fn from(m: StateSpaceModel) -> Self {
        ModelDoc {
            a: m.a,
            c: m.c,
            q: m.q,
            sigma: m.sigma,
            nu: m.nu,
            x0_mean: m.x0_mean,
            p0: m.p0,
        }
    }
}

/// Per-channel two-component Gaussian mixture: nominal noise with
/// probability `1 - p_outlier`, wide outlier noise otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contamination {
    pub p_outlier: f64,
    pub var_nominal: f64,
    pub var_outlier: f64,
}

impl Contamination {
    pub fn variance(&self) -> f64 {
        (1.0 - self.p_outlier) * self.var_nominal + self.p_outlier * self.var_outlier
    }
}

/// Law used to *generate* measurement noise. Deliberately separate from the
/// Student-t parameters the filter assumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasurementNoise {
    StudentT { sigma: Vec<f64>, nu: Vec<f64> },
    ContaminatedGaussian { channels: Vec<Contamination> },
}

/// One noise sample together with the mixture branch that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseDraw {
    pub value: f64,
    pub outlier: bool,
}

impl MeasurementNoise {
    /// Same contamination law applied independently on `n_y` channels.
    pub fn contaminated_iid(n_y: usize, c: Contamination) -> Self {
        MeasurementNoise::ContaminatedGaussian {
            channels: vec![c; n_y],
        }
    }

    pub fn n_channels(&self) -> usize {
        match self {
            MeasurementNoise::StudentT { sigma, .. } => sigma.len(),
            MeasurementNoise::ContaminatedGaussian { channels } => channels.len(),
        }
    }

    pub fn validate(&self, n_y: usize) -> Result<()> {
        dim_check("noise channels", n_y, self.n_channels())?;
        match self {
            MeasurementNoise::StudentT { sigma, nu } => {
                dim_check("noise nu", sigma.len(), nu.len())?;
                if sigma.iter().chain(nu.iter()).any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::Parameter(
                        "student-t sigma and nu must be positive".into(),
                    ));
                }
            }
            MeasurementNoise::ContaminatedGaussian { channels } => {
                for c in channels {
                    if !(0.0..=1.0).contains(&c.p_outlier) {
                        return Err(Error::Parameter(format!(
                            "p_outlier must lie in [0, 1], got {}",
                            c.p_outlier
                        )));
                    }
                    // zero variance is accepted for noiseless simulations
                    if !(c.var_nominal >= 0.0 && c.var_outlier >= 0.0)
                        || !c.var_nominal.is_finite()
                        || !c.var_outlier.is_finite()
                    {
                        return Err(Error::Parameter(
                            "contamination variances must be finite and non-negative".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Variance of channel `i` (infinite for Student-t with ν ≤ 2).
    pub fn variance(&self, i: usize) -> f64 {
        match self {
            MeasurementNoise::StudentT { sigma, nu } => {
                if nu[i] > 2.0 {
                    nu[i] * sigma[i] * sigma[i] / (nu[i] - 2.0)
                } else {
                    f64::INFINITY
                }
            }
            MeasurementNoise::ContaminatedGaussian { channels } => channels[i].variance(),
        }
    }

    pub fn sample_channel<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> NoiseDraw {
        match self {
            MeasurementNoise::StudentT { sigma, nu } => NoiseDraw {
                value: sample_student_t(sigma[i], nu[i], rng),
                outlier: false,
            },
            MeasurementNoise::ContaminatedGaussian { channels } => {
                let c = &channels[i];
                let outlier = rng.random::<f64>() < c.p_outlier;
                let var = if outlier { c.var_outlier } else { c.var_nominal };
                let z: f64 = rng.sample(StandardNormal);
                NoiseDraw {
                    value: var.sqrt() * z,
                    outlier,
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.n_channels(),
            (0..self.n_channels()).map(|i| self.sample_channel(i, rng).value),
        )
    }
}

/// Student-t draw as a Gaussian over the root of a scaled chi-square.
pub fn sample_student_t<R: Rng + ?Sized>(sigma: f64, nu: f64, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let chi = ChiSquared::new(nu).expect("nu validated positive");
    let w: f64 = chi.sample(rng);
    sigma * z / (w / nu).sqrt()
}

/// Draws `N(mean, cov)` using a precomputed square-root factor of `cov`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov_sqrt: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_iterator(cov_sqrt.ncols(), (0..cov_sqrt.ncols()).map(|_| rng.sample(StandardNormal)));
    mean + cov_sqrt * z
}

/// True states and the measurements taken of them, `k = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>, measurements: Vec<DVector<f64>>) -> Result<Self> {
        dim_check("trajectory length", states.len(), measurements.len())?;
        Ok(Self {
            states,
            measurements,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// CSV with columns `k, x_1..x_{n_x}, y_1..y_{n_y}` (k is 1-based).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n_x = self.states.first().map_or(0, |x| x.len());
        let n_y = self.measurements.first().map_or(0, |y| y.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((1..=n_x).map(|i| format!("x_{i}")));
        header.extend((1..=n_y).map(|i| format!("y_{i}")));
        w.write_record(&header)?;
        for (k, (x, y)) in self.states.iter().zip(&self.measurements).enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend(x.iter().map(|v| crate::format_float(*v)));
            rec.extend(y.iter().map(|v| crate::format_float(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `y = C x + v` for each state, noise drawn from `noise`.
pub fn measure_states<R: Rng + ?Sized>(
    c: &DMatrix<f64>,
    noise: &MeasurementNoise,
    states: &[DVector<f64>],
    rng: &mut R,
) -> Vec<DVector<f64>> {
    states.iter().map(|x| c * x + noise.sample(rng)).collect()
}

/// Simulates `steps` steps of the model with measurement noise drawn from `noise`.
pub fn simulate(
    model: &StateSpaceModel,
    noise: &MeasurementNoise,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Parameter("steps must be at least 1".into()));
    }
    noise.validate(model.n_y())?;
    let mut rng = rng_from_seed(seed);
    let p0_sqrt = psd_sqrt(model.p0());
    let q_sqrt = psd_sqrt(model.q());
    let zero = DVector::zeros(model.n_x());

    let mut states = Vec::with_capacity(steps);
    let mut measurements = Vec::with_capacity(steps);
    let mut x = sample_gaussian(model.x0_mean(), &p0_sqrt, &mut rng);
    for k in 0..steps {
        measurements.push(model.c() * &x + noise.sample(&mut rng));
        if k + 1 < steps {
            let next = model.a() * &x + sample_gaussian(&zero, &q_sqrt, &mut rng);
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
    }
    Trajectory::new(states, measurements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scalar_model(q: f64, p0: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, q),
            vec![1.0],
            vec![3.0],
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, p0),
        )
        .unwrap()
    }

    #[test]
    fn cauchy_mode_values() {
        let v = student_t_logpdf(0.0, 1.0, 1.0).unwrap();
        assert!((v - (1.0 / PI).ln()).abs() < 1e-12);
        assert!((v + 1.14473).abs() < 1e-5);
        let v2 = student_t_logpdf(0.0, 2.0, 1.0).unwrap();
        assert!((v2 - (1.0 / (2.0 * PI)).ln()).abs() < 1e-12);
    }

    #[test]
    fn logpdf_rejects_bad_parameters() {
        assert!(matches!(student_t_logpdf(0.0, 0.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(student_t_logpdf(0.0, 1.0, -1.0), Err(Error::Parameter(_))));
    }

    #[test]
    fn logpdf_is_finite_far_in_the_tail() {
        let v = student_t_logpdf(1e150, 1.0, 3.0).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn model_rejects_bad_dimensions_and_params() {
        let ok = scalar_model(0.1, 1.0);
        assert!(ok.with_noise_params(vec![0.0], vec![3.0]).is_err());
        assert!(ok.with_noise_params(vec![1.0], vec![0.0]).is_err());
        assert!(ok.with_noise_params(vec![1.0, 1.0], vec![3.0]).is_err());
        let bad_c = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2),
            vec![1.0],
            vec![3.0],
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(bad_c, Err(Error::Dimension(_))));
        let bad_q = StateSpaceModel::new(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, -1.0),
            vec![1.0],
            vec![3.0],
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        );
        assert!(matches!(bad_q, Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn noiseless_simulation_is_a_fixed_point() {
        let c_val = DVector::from_vec(vec![1.5, -2.0]);
        let model = StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(1, 2, &[2.0, 1.0]),
            DMatrix::zeros(2, 2),
            vec![1.0],
            vec![3.0],
            c_val.clone(),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let noise = MeasurementNoise::contaminated_iid(
            1,
            Contamination {
                p_outlier: 0.1,
                var_nominal: 0.0,
                var_outlier: 0.0,
            },
        );
        let traj = simulate(&model, &noise, 25, 7).unwrap();
        assert_eq!(traj.len(), 25);
        for (x, y) in traj.states.iter().zip(&traj.measurements) {
            assert_eq!(x, &c_val);
            assert_eq!(y[0], 2.0 * 1.5 - 2.0);
        }
    }

    #[test]
    fn simulation_is_seed_deterministic() {
        let model = scalar_model(0.1, 1.0);
        let noise = model.student_t_noise();
        let a = simulate(&model, &noise, 50, 11).unwrap();
        let b = simulate(&model, &noise, 50, 11).unwrap();
        let c = simulate(&model, &noise, 50, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn simulate_rejects_zero_steps_and_channel_mismatch() {
        let model = scalar_model(0.1, 1.0);
        assert!(simulate(&model, &model.student_t_noise(), 0, 1).is_err());
        let noise = MeasurementNoise::StudentT {
            sigma: vec![1.0, 1.0],
            nu: vec![3.0, 3.0],
        };
        assert!(matches!(simulate(&model, &noise, 5, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn contamination_validation() {
        let bad = MeasurementNoise::contaminated_iid(
            1,
            Contamination {
                p_outlier: 1.5,
                var_nominal: 0.1,
                var_outlier: 10.0,
            },
        );
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = Trajectory::new(
            vec![DVector::from_vec(vec![1.0, 2.0])],
            vec![DVector::from_vec(vec![3.5])],
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,x_1,x_2,y_1\n1,1,2,3.5\n");
    }
}
