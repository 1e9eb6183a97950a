//! Finite-state Markov chains observed through per-sensor Gaussian channels,
//! their simulation, and the exact centralized filter.
//!
//! The unnormalized filter obeys `E_t = Λ_t P E_{t-1}` and decays
//! geometrically in `N t`, so it is carried as [`ScaledVector`]: a log scale
//! plus a unit-ℓ₁ direction.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{stream, Stream};

/// Tolerance on the stochasticity of `P` and `pi_init`.
pub const PROBABILITY_TOL: f64 = 1e-9;

/// Name of the built-in experiment model.
pub const ASILOMAR_PRESET: &str = "asilomar-v";

/// Name of the small three-state model used for bound verification.
pub const COMPACT_PRESET: &str = "compact-3";

/// Mean of one sensor's observation as a function of the state value `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    /// One vector per state, in state order.
    Table { values: Vec<Vec<f64>> },
    /// `slope * x + intercept`.
    Affine {
        slope: Vec<f64>,
        intercept: Vec<f64>,
    },
    /// `amplitude * sin(x) + offset`.
    Sine {
        amplitude: Vec<f64>,
        offset: Vec<f64>,
    },
}

/// Observation covariance of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceSpec {
    Shared { matrix: Vec<Vec<f64>> },
    PerState { matrices: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub mean: MeanSpec,
    pub covariance: CovarianceSpec,
}

/// Serializable model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub states: Vec<f64>,
    /// Columns of `P`: `transition[j][i]` is the probability of moving to
    /// state `i` from state `j`.
    pub transition: Vec<Vec<f64>>,
    pub pi_init: Vec<f64>,
    pub sensors: Vec<SensorSpec>,
}

impl ModelConfig {
    /// The built-in experiment model with `s` identical sensors.
    pub fn asilomar(s: usize) -> Self {
        let rho = |d: f64| 2.0 * (-2.0 * d).exp();
        let sensor = SensorSpec {
            mean: MeanSpec::Sine {
                amplitude: vec![-1.0, -1.0],
                offset: vec![0.0, 0.0],
            },
            covariance: CovarianceSpec::Shared {
                matrix: vec![vec![rho(0.0), rho(1.0)], vec![rho(1.0), rho(0.0)]],
            },
        };
        Self {
            states: vec![0.7, 0.5, 1.0, 1.0 / 3.0],
            transition: vec![
                vec![0.4, 0.3, 0.2, 0.1],
                vec![0.25, 0.25, 0.25, 0.25],
                vec![0.2, 0.3, 0.3, 0.2],
                vec![0.3, 0.3, 0.2, 0.2],
            ],
            pi_init: vec![1.0, 0.0, 0.0, 0.0],
            sensors: vec![sensor; s],
        }
    }

    /// Three states, `s` sensors with the same channels as [`Self::asilomar`].
    pub fn compact(s: usize) -> Self {
        let mut cfg = Self::asilomar(s);
        cfg.states = vec![0.25, 1.0, 1.75];
        cfg.transition = vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.3, 0.6],
        ];
        cfg.pi_init = vec![1.0 / 3.0; 3];
        cfg
    }

    /// Resolves a preset name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            ASILOMAR_PRESET => Ok(Self::asilomar(60)),
            COMPACT_PRESET => Ok(Self::compact(8)),
            other => Err(param(format!("unknown model preset {other:?}"))),
        }
    }
}

/// Gaussian channel for one `(sensor, state)` pair.
#[derive(Debug, Clone)]
struct Channel {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov`.
    chol: DMatrix<f64>,
    log_det: f64,
    eig_min: f64,
    eig_max: f64,
}

impl Channel {
    fn new(mean: DVector<f64>, cov: DMatrix<f64>, what: &str) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Validation(format!(
                "{what}: covariance is not {n}x{n}"
            )));
        }
        if (&cov - cov.transpose()).abs().max() > 1e-12 * cov.abs().max().max(1.0) {
            return Err(Error::Validation(format!(
                "{what}: covariance is not symmetric"
            )));
        }
        let eig = cov.clone().symmetric_eigenvalues();
        let eig_min = eig.min();
        let eig_max = eig.max();
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::Validation(format!("{what}: covariance is not positive definite"))
        })?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if eig_min.is_nan() || eig_min <= 0.0 {
            return Err(Error::Validation(format!(
                "{what}: covariance is not positive definite"
            )));
        }
        Ok(Self {
            mean,
            cov,
            chol: l,
            log_det,
            eig_min,
            eig_max,
        })
    }

    /// `(y - mean)' Σ^{-1} (y - mean) + log det Σ`.
    fn statistic(&self, y: &DVector<f64>) -> f64 {
        let r = y - &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&r)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared() + self.log_det
    }
}

/// Validated model with cached factorizations.
#[derive(Debug, Clone)]
pub struct HmmModel {
    config: ModelConfig,
    p: DMatrix<f64>,
    /// `channels[k][j]`: sensor `k` in state `j`.
    channels: Vec<Vec<Channel>>,
    obs_scale: f64,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation(format!(
            "{what}: matrix rows must all have length {n}"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Validation(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOL {
        return Err(Error::Validation(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

impl HmmModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::with_scale(config, 1.0)
    }

    fn with_scale(config: ModelConfig, c: f64) -> Result<Self> {
        let l = config.states.len();
        if l == 0 {
            return Err(Error::Validation("state space is empty".into()));
        }
        if config.states.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("state values must be finite".into()));
        }
        if config.transition.len() != l || config.transition.iter().any(|c| c.len() != l) {
            return Err(Error::Validation(format!(
                "transition matrix must be {l}x{l}"
            )));
        }
        for (j, col) in config.transition.iter().enumerate() {
            check_distribution(col, &format!("column {j} of P"))?;
        }
        if config.pi_init.len() != l {
            return Err(Error::Validation(format!("pi_init must have length {l}")));
        }
        check_distribution(&config.pi_init, "pi_init")?;
        if config.sensors.is_empty() {
            return Err(Error::Validation("at least one sensor is required".into()));
        }

        let p = DMatrix::from_fn(l, l, |i, j| config.transition[j][i]);
        let mut channels = Vec::with_capacity(config.sensors.len());
        for (k, spec) in config.sensors.iter().enumerate() {
            let mut per_state = Vec::with_capacity(l);
            for (j, &x) in config.states.iter().enumerate() {
                let what = format!("sensor {k}, state {j}");
                let mean = match &spec.mean {
                    MeanSpec::Table { values } => {
                        let v = values.get(j).ok_or_else(|| {
                            Error::Validation(format!(
                                "{what}: mean table has {} rows",
                                values.len()
                            ))
                        })?;
                        DVector::from_column_slice(v)
                    }
                    MeanSpec::Affine { slope, intercept } => {
                        if slope.len() != intercept.len() {
                            return Err(Error::Validation(format!(
                                "{what}: slope/intercept lengths differ"
                            )));
                        }
                        DVector::from_fn(slope.len(), |i, _| slope[i] * x + intercept[i])
                    }
                    MeanSpec::Sine { amplitude, offset } => {
                        if amplitude.len() != offset.len() {
                            return Err(Error::Validation(format!(
                                "{what}: amplitude/offset lengths differ"
                            )));
                        }
                        DVector::from_fn(amplitude.len(), |i, _| amplitude[i] * x.sin() + offset[i])
                    }
                };
                let cov = match &spec.covariance {
                    CovarianceSpec::Shared { matrix } => to_matrix(matrix, &what)?,
                    CovarianceSpec::PerState { matrices } => {
                        let m = matrices.get(j).ok_or_else(|| {
                            Error::Validation(format!(
                                "{what}: {} covariance matrices listed",
                                matrices.len()
                            ))
                        })?;
                        to_matrix(m, &what)?
                    }
                };
                if mean.is_empty() {
                    return Err(Error::Validation(format!(
                        "{what}: observation dimension is zero"
                    )));
                }
                per_state.push(Channel::new(mean * c, cov * (c * c), &what)?);
            }
            let dim = per_state[0].mean.len();
            if per_state.iter().any(|ch| ch.mean.len() != dim) {
                return Err(Error::Validation(format!(
                    "sensor {k}: dimension varies across states"
                )));
            }
            channels.push(per_state);
        }
        Ok(Self {
            config,
            p,
            channels,
            obs_scale: c,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::new(ModelConfig::preset(name)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Factor applied to observations and means (1 unless normalized).
    pub fn observation_scale(&self) -> f64 {
        self.obs_scale
    }

    pub fn state_count(&self) -> usize {
        self.config.states.len()
    }

    pub fn states(&self) -> &[f64] {
        &self.config.states
    }

    pub fn sensor_count(&self) -> usize {
        self.channels.len()
    }

    /// Observation dimension of sensor `k`.
    pub fn sensor_dim(&self, k: usize) -> usize {
        self.channels[k][0].mean.len()
    }

    /// Total observation dimension.
    pub fn total_dim(&self) -> usize {
        (0..self.sensor_count()).map(|k| self.sensor_dim(k)).sum()
    }

    /// Column-stochastic transition matrix.
    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn pi_init(&self) -> &[f64] {
        &self.config.pi_init
    }

    /// Mean of sensor `k` in state `j`.
    pub fn mean(&self, k: usize, j: usize) -> &DVector<f64> {
        &self.channels[k][j].mean
    }

    /// Covariance of sensor `k` in state `j`.
    pub fn covariance(&self, k: usize, j: usize) -> &DMatrix<f64> {
        &self.channels[k][j].cov
    }

    /// Smallest eigenvalue over all block-diagonal stacked covariances.
    pub fn lambda_inf(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .map(|c| c.eig_min)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest eigenvalue over all block-diagonal stacked covariances.
    pub fn lambda_sup(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .map(|c| c.eig_max)
            .fold(0.0, f64::max)
    }

    /// Largest Euclidean norm of the stacked mean over states.
    pub fn mu_sup(&self) -> f64 {
        (0..self.state_count())
            .map(|j| {
                self.channels
                    .iter()
                    .map(|ch| ch[j].mean.norm_squared())
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Human-readable notes on violated modelling assumptions.
    pub fn assumption_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let li = self.lambda_inf();
        if li < std::f64::consts::E {
            out.push(format!(
                "smallest observation covariance eigenvalue {li:.6} is below e; \
                 the stability bounds assume it is at least e (see --normalize)"
            ));
        }
        out
    }

    /// Copy with observations rescaled so that every covariance eigenvalue
    /// is at least `e`; identity when that already holds.
    pub fn normalized(&self) -> Result<Self> {
        let li = self.lambda_inf();
        if li >= std::f64::consts::E {
            return Ok(self.clone());
        }
        let mut c = self.obs_scale * (std::f64::consts::E / li).sqrt();
        loop {
            let m = Self::with_scale(self.config.clone(), c)?;
            if m.lambda_inf() >= std::f64::consts::E {
                return Ok(m);
            }
            c *= 1.0 + 1e-12;
        }
    }

    fn check_observation(&self, y: &DVector<f64>, k: usize) -> Result<()> {
        if y.len() != self.sensor_dim(k) {
            return Err(param(format!(
                "sensor {k} expects {} observation entries, got {}",
                self.sensor_dim(k),
                y.len()
            )));
        }
        Ok(())
    }

    /// `S [(y - μ)' Σ^{-1} (y - μ) + log det Σ]` for sensor `k` in state `j`.
    ///
    /// The model is time-invariant; `t` is accepted so time-varying channels
    /// can be added without changing callers.
    pub fn local_statistic(&self, y: &DVector<f64>, k: usize, j: usize, _t: usize) -> Result<f64> {
        self.check_observation(y, k)?;
        let v = self.sensor_count() as f64 * self.channels[k][j].statistic(y);
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite statistic at sensor {k}, state {j}"
            )));
        }
        Ok(v)
    }

    /// All local statistics at one time, indexed `[state][sensor]`.
    pub fn local_statistics(&self, y_t: &[DVector<f64>], t: usize) -> Result<Vec<Vec<f64>>> {
        if y_t.len() != self.sensor_count() {
            return Err(param(format!(
                "expected {} sensor observations, got {}",
                self.sensor_count(),
                y_t.len()
            )));
        }
        (0..self.state_count())
            .map(|j| {
                (0..self.sensor_count())
                    .map(|k| self.local_statistic(&y_t[k], k, j, t))
                    .collect()
            })
            .collect()
    }

    /// `-θ_t(x_j)/2` per state, where `θ_t` averages the local statistics.
    pub fn log_likelihoods(&self, y_t: &[DVector<f64>], t: usize) -> Result<Vec<f64>> {
        Ok(self
            .local_statistics(y_t, t)?
            .iter()
            .map(|col| log_likelihood_from_average(network_average(col)))
            .collect())
    }

    /// Diagonal likelihood matrix `Λ_t`.
    pub fn likelihood_matrix(&self, y_t: &[DVector<f64>], t: usize) -> Result<DMatrix<f64>> {
        let ll = self.log_likelihoods(y_t, t)?;
        Ok(DMatrix::from_diagonal(&DVector::from_iterator(
            ll.len(),
            ll.iter().map(|v| v.exp()),
        )))
    }
}

/// Average of per-sensor values; the single code path shared by the
/// centralized filter and exact-average distributed runs.
pub fn network_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `-θ/2`.
#[inline]
pub fn log_likelihood_from_average(theta: f64) -> f64 {
    -0.5 * theta
}

/// Simulated trajectory and observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRun {
    /// State indices for `t = -1, 0, …, T` (entry 0 is the initial draw).
    pub states: Vec<usize>,
    /// `observations[t][k]` for `t = 0..=T`.
    pub observations: Vec<Vec<DVector<f64>>>,
}

impl SimulationRun {
    pub fn horizon(&self) -> usize {
        self.observations.len() - 1
    }

    /// State index at time `t >= 0`.
    pub fn state_at(&self, t: usize) -> usize {
        self.states[t + 1]
    }

    /// `‖y_t‖²` of the stacked observation.
    pub fn energy(&self, t: usize) -> f64 {
        self.observations[t].iter().map(|y| y.norm_squared()).sum()
    }
}

/// Draws a trajectory for `t = -1..=T` and observations for `t = 0..=T`.
pub fn simulate(model: &HmmModel, horizon: usize, seed: u64) -> Result<SimulationRun> {
    let mut traj_rng = stream(seed, Stream::Trajectory);
    let mut obs_rng = stream(seed, Stream::Observations);
    let columns: Vec<WeightedIndex<f64>> = model
        .config
        .transition
        .iter()
        .map(|c| {
            WeightedIndex::new(c).map_err(|e| Error::Validation(format!("transition column: {e}")))
        })
        .collect::<Result<_>>()?;
    let init = WeightedIndex::new(&model.config.pi_init)
        .map_err(|e| Error::Validation(format!("pi_init: {e}")))?;

    let mut states = Vec::with_capacity(horizon + 2);
    states.push(init.sample(&mut traj_rng));
    let mut observations = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        let prev = *states.last().expect("initial state drawn");
        let x = columns[prev].sample(&mut traj_rng);
        states.push(x);
        let y_t = model
            .channels
            .iter()
            .map(|ch| {
                let c = &ch[x];
                let z = DVector::from_fn(c.mean.len(), |_, _| {
                    obs_rng.sample::<f64, _>(StandardNormal)
                });
                &c.mean + &c.chol * z
            })
            .collect();
        observations.push(y_t);
    }
    Ok(SimulationRun {
        states,
        observations,
    })
}

/// Nonnegative vector `exp(log_scale) * dir` with `‖dir‖₁ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledVector {
    pub log_scale: f64,
    pub dir: Vec<f64>,
}

impl ScaledVector {
    /// A probability vector at unit scale.
    pub fn from_distribution(pi: &[f64]) -> Self {
        Self {
            log_scale: 0.0,
            dir: pi.to_vec(),
        }
    }

    /// `ln ‖E‖₁`.
    pub fn log_l1_norm(&self) -> f64 {
        self.log_scale
    }

    /// The normalized vector `E / ‖E‖₁`.
    pub fn normalized(&self) -> &[f64] {
        &self.dir
    }

    /// `diag(exp(log_lik)) P self`, renormalized.
    pub fn advance(&self, p: &DMatrix<f64>, log_lik: &[f64]) -> Result<Self> {
        let l = self.dir.len();
        let v = p * DVector::from_column_slice(&self.dir);
        let l_max = log_lik
            .iter()
            .zip(v.iter())
            .filter(|(_, &vj)| vj > 0.0)
            .map(|(&lj, _)| lj)
            .fold(f64::NEG_INFINITY, f64::max);
        if !l_max.is_finite() {
            return Err(Error::Numeric(
                "unnormalized filter vanished or is non-finite".into(),
            ));
        }
        let mut w: Vec<f64> = (0..l).map(|j| v[j] * (log_lik[j] - l_max).exp()).collect();
        let sum: f64 = w.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::Numeric(
                "unnormalized filter vanished or is non-finite".into(),
            ));
        }
        for x in &mut w {
            *x /= sum;
        }
        Ok(Self {
            log_scale: self.log_scale + l_max + sum.ln(),
            dir: w,
        })
    }

    /// `ln ‖self - other‖₁`, aligned to the larger scale; `-inf` when equal.
    pub fn log_l1_distance(&self, other: &Self) -> f64 {
        let top = self.log_scale.max(other.log_scale);
        let fa = (self.log_scale - top).exp();
        let fb = (other.log_scale - top).exp();
        let d: f64 = self
            .dir
            .iter()
            .zip(&other.dir)
            .map(|(a, b)| (a * fa - b * fb).abs())
            .sum();
        top + d.ln()
    }
}

/// `‖a - b‖₁`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// One step of the centralized recursion.
pub fn centralized_step(
    state: &ScaledVector,
    log_lik: &[f64],
    p: &DMatrix<f64>,
) -> Result<ScaledVector> {
    state.advance(p, log_lik)
}

/// Unnormalized filter for `t = 0..=T`.
pub fn run_centralized(model: &HmmModel, sim: &SimulationRun) -> Result<Vec<ScaledVector>> {
    let mut e = ScaledVector::from_distribution(model.pi_init());
    let mut out = Vec::with_capacity(sim.observations.len());
    for (t, y_t) in sim.observations.iter().enumerate() {
        e = centralized_step(&e, &model.log_likelihoods(y_t, t)?, model.transition())?;
        out.push(e.clone());
    }
    Ok(out)
}

/// Posterior mean `Σ_j x_j π_j`.
pub fn mmse_estimate(pi: &[f64], states: &[f64]) -> f64 {
    pi.iter().zip(states).map(|(p, x)| p * x).sum()
}
