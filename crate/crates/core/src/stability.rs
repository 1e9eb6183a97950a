//! Finite-horizon stability constants, minimal consensus round counts, and
//! Monte-Carlo checks of the resulting guarantees.
//!
//! All guarantees hold on the event that every observation energy up to the
//! horizon stays under `βCN(1 + log(T+1))`; the verifiers partition runs by
//! that event and only assert on runs inside it. Logarithms are natural.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::iterate_bound_start;
use crate::dfilter::{l1_disagreement, run_distributed, Averaging, RunOptions};
use crate::error::{param, Error, Result};
use crate::hmm::{run_centralized, simulate, HmmModel, SimulationRun};
use crate::mixing::{MixingMatrix, SpectrumReport};
use crate::numeric::stats::binomial_frequency_sigma;
use crate::rng::{stream, Stream};

/// Inputs from which [`StabilityConstants`] are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    /// Free constant `C ≥ 1` of the observation envelope.
    pub c: f64,
    pub beta: f64,
    pub lambda_inf: f64,
    pub lambda_sup: f64,
    pub mu_sup: f64,
    /// Prefactor of the optimal consensus bound.
    pub gamma: f64,
    /// Consensus rate (the optimal SLEM).
    pub rho: f64,
    /// Largest augmentation scalar in use; fixes the round-count floor.
    pub eps_max: f64,
    pub horizon: usize,
    /// Total observation dimension `N`.
    pub total_dim: usize,
    pub sensors: usize,
}

impl ConstantInputs {
    /// Collects model bounds and the optimal consensus constants.
    ///
    /// The guarantees assume consensus runs at the optimal augmentation, so
    /// a report computed at any other value is rejected.
    pub fn from_model(
        model: &HmmModel,
        spectrum: &SpectrumReport,
        c: f64,
        beta: f64,
        horizon: usize,
    ) -> Result<Self> {
        if (spectrum.eps - spectrum.eps_star).abs() > 1e-12 * spectrum.eps_star.max(1.0) {
            return Err(Error::Assumption(format!(
                "stability constants need the optimal augmentation {} (got {})",
                spectrum.eps_star, spectrum.eps
            )));
        }
        Ok(Self {
            c,
            beta,
            lambda_inf: model.lambda_inf(),
            lambda_sup: model.lambda_sup(),
            mu_sup: model.mu_sup(),
            gamma: spectrum.gamma,
            rho: spectrum.rho_star,
            eps_max: spectrum.eps_star,
            horizon,
            total_dim: model.total_dim(),
            sensors: model.sensor_count(),
        })
    }
}

/// Every constant of the stability analysis, evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    #[serde(flatten)]
    pub inputs: ConstantInputs,
    /// `β((1+μ_sup)² λ_inf + log λ_sup)`.
    pub delta: f64,
    /// `β((1+μ_sup)² / λ_inf + log λ_sup)`, the form implied by
    /// `Σ⁻¹ ⪯ λ_inf⁻¹ I`; reported alongside, never used for round counts.
    pub delta_variant: f64,
    /// `δ max{2 / log λ_inf, 3}`; absent when `λ_inf ≤ 1`.
    pub eta: Option<f64>,
    /// `1 / log(1/ρ)`.
    pub tau: f64,
    /// `log B`, the log of the lower bound on `‖E_t‖₁`.
    pub log_b: f64,
}

/// `1 + log(T+1)`.
fn envelope_factor(horizon: usize) -> f64 {
    1.0 + ((horizon + 1) as f64).ln()
}

/// `log max(T, 2)`: stands in for `log T`, which vanishes at `T = 1`.
fn log_horizon(horizon: usize) -> f64 {
    (horizon.max(2) as f64).ln()
}

/// Smallest power of two not below `x` (and not below one).
fn power_of_two_ceil(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        2f64.powi(x.log2().ceil() as i32)
    }
}

impl StabilityConstants {
    pub fn new(inputs: ConstantInputs) -> Result<Self> {
        let ConstantInputs {
            c,
            beta,
            lambda_inf,
            lambda_sup,
            mu_sup,
            gamma,
            rho,
            eps_max,
            ..
        } = inputs;
        if !(c >= 1.0 && c.is_finite()) {
            return Err(param(format!("C must be at least 1, got {c}")));
        }
        if !(beta > 1.0 && beta.is_finite()) {
            return Err(param(format!("beta must exceed 1, got {beta}")));
        }
        if !(lambda_inf > 0.0 && lambda_sup >= lambda_inf && lambda_sup.is_finite()) {
            return Err(param(format!(
                "need 0 < lambda_inf <= lambda_sup, got {lambda_inf}, {lambda_sup}"
            )));
        }
        if !(mu_sup >= 0.0 && mu_sup.is_finite()) {
            return Err(param(format!(
                "mu_sup must be finite and nonnegative, got {mu_sup}"
            )));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(param(format!("gamma must be positive, got {gamma}")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(param(format!(
                "consensus rate must lie in [0, 1), got {rho}"
            )));
        }
        if !(eps_max > 0.0 && eps_max.is_finite()) {
            return Err(param(format!("eps_max must be positive, got {eps_max}")));
        }
        if inputs.total_dim == 0 || inputs.sensors == 0 {
            return Err(param(
                "observation dimension and sensor count must be positive",
            ));
        }
        let mu1 = (1.0 + mu_sup).powi(2);
        let delta = beta * (mu1 * lambda_inf + lambda_sup.ln());
        let delta_variant = beta * (mu1 / lambda_inf + lambda_sup.ln());
        let eta = (lambda_inf > 1.0).then(|| delta * (2.0 / lambda_inf.ln()).max(3.0));
        let tau = if rho == 0.0 {
            0.0
        } else {
            1.0 / (1.0 / rho).ln()
        };

        let n = inputs.total_dim as f64;
        let t1 = (inputs.horizon + 1) as f64;
        let radius = (beta * c * n * envelope_factor(inputs.horizon)).sqrt() + mu_sup;
        let log_b = -n * t1 / 2.0 * lambda_sup.ln() - radius * radius * t1 / (2.0 * lambda_inf);
        Ok(Self {
            inputs,
            delta,
            delta_variant,
            eta,
            tau,
            log_b,
        })
    }

    /// `B`, possibly underflowing to zero; compare via [`Self::log_b`].
    pub fn e_lower_bound(&self) -> f64 {
        self.log_b.exp()
    }

    /// `S^{1.5} C (1 + log(T+1))`, the factor shared by every round count.
    fn scale(&self) -> f64 {
        let i = &self.inputs;
        (i.sensors as f64).powf(1.5) * i.c * envelope_factor(i.horizon)
    }

    /// `δ S^{1.5} C N (1 + log(T+1))`.
    pub fn growth_bound(&self) -> f64 {
        self.delta * self.scale() * self.inputs.total_dim as f64
    }

    /// [`Self::growth_bound`] with `δ` replaced by its variant.
    pub fn growth_bound_variant(&self) -> f64 {
        self.delta_variant * self.scale() * self.inputs.total_dim as f64
    }

    /// Lower bound `(N/2) log λ_inf` on every consensus iterate.
    pub fn iterate_floor(&self) -> f64 {
        self.inputs.total_dim as f64 / 2.0 * self.inputs.lambda_inf.ln()
    }

    /// `⌊2 ε_max + 2⌋`, below which no guarantee applies.
    pub fn round_floor(&self) -> usize {
        iterate_bound_start(self.inputs.eps_max).max(2)
    }

    fn eta_or_err(&self) -> Result<f64> {
        self.eta.ok_or_else(|| {
            Error::Assumption(format!(
                "lambda_inf = {} must exceed 1",
                self.inputs.lambda_inf
            ))
        })
    }

    /// Right side of the iterate lower-bound condition.
    pub fn iterate_floor_rhs(&self) -> Result<f64> {
        let li = self.inputs.lambda_inf;
        if li <= 1.0 {
            return Err(Error::Assumption(format!(
                "lambda_inf = {li} must exceed 1"
            )));
        }
        Ok(self.tau * (2.0 * self.delta * self.scale() / li.ln()).ln())
    }

    /// Minimal rounds after which every iterate is at least
    /// [`Self::iterate_floor`].
    pub fn required_n_iterate_floor(&self) -> Result<usize> {
        let rhs = self.iterate_floor_rhs()?;
        solve_min_n(self.tau, self.inputs.gamma, rhs, self.round_floor())
    }

    /// Right side of the unnormalized-accuracy condition.
    pub fn unnormalized_rhs(&self, eps_acc: f64) -> Result<f64> {
        if !(eps_acc > 0.0 && eps_acc < 1.0) {
            return Err(param(format!("accuracy must lie in (0, 1), got {eps_acc}")));
        }
        Ok(self.tau * (self.eta_or_err()? * self.scale() / eps_acc).ln())
    }

    /// Minimal rounds for `sup ‖E_t - Ẽᵏ_t‖₁ ≤ eps_acc`.
    pub fn required_n_unnormalized(&self, eps_acc: f64) -> Result<usize> {
        let rhs = self.unnormalized_rhs(eps_acc)?;
        solve_min_n(self.tau, self.inputs.gamma, rhs, self.round_floor())
    }

    /// Assembles the constant `c` of the posterior condition.
    pub fn posterior_chain(&self, eps_acc: f64, m: f64) -> Result<PosteriorChain> {
        let i = &self.inputs;
        if !(eps_acc > 0.0 && eps_acc <= 1.0) {
            return Err(param(format!("accuracy must lie in (0, 1], got {eps_acc}")));
        }
        if !(m >= 0.0 && m.is_finite()) {
            return Err(param(format!(
                "extra decay exponent must be finite and nonnegative, got {m}"
            )));
        }
        if i.sensors < 2 {
            return Err(param("the posterior guarantee needs at least 2 sensors"));
        }
        if i.horizon == 0 {
            return Err(param(
                "the posterior guarantee needs a horizon of at least 1",
            ));
        }
        if i.lambda_sup < std::f64::consts::E {
            return Err(Error::Assumption(format!(
                "lambda_sup = {} must be at least e",
                i.lambda_sup
            )));
        }
        let eta = self.eta_or_err()?;
        let t = i.horizon as f64;
        let cn = i.c * i.total_dim as f64;
        let lt = log_horizon(i.horizon);
        let log_sup = i.lambda_sup.ln();

        let c1 = 0.5 + i.beta * (i.mu_sup + 1.0).powi(2) / (2.0 * i.lambda_inf);
        let c2 = power_of_two_ceil((t + 1.0) * envelope_factor(i.horizon) / (t * lt));
        let c0 = c1 * c2;
        let c0_tilde = c0 * log_sup;
        let log_ratio = (i.c * i.sensors as f64 * t / eps_acc).ln();
        let head = (2.0 * c2 * eta * (i.sensors as f64).powf(1.5) * i.c * lt / eps_acc).ln();
        let c2_tilde = power_of_two_ceil(head / log_ratio);
        let c = c0_tilde + c2_tilde;
        let rhs = c * self.tau * cn * t * log_ratio + self.tau * m;

        // the chain is sound iff B λ_sup^{c₀CNT log T} ≥ 1 and the assembled
        // right side dominates the unnormalized one at the shrunken accuracy
        let b_absorbed = -self.log_b - c0 * cn * t * lt * log_sup <= 0.0;
        let log_eps_sub = -std::f64::consts::LN_2 - c0 * cn * t * lt * log_sup + eps_acc.ln() - m;
        let sub_rhs = self.tau * ((eta * self.scale()).ln() - log_eps_sub);
        let dominates = rhs >= sub_rhs;
        Ok(PosteriorChain {
            c1,
            c2,
            c0,
            c0_tilde,
            c2_tilde,
            c,
            rhs,
            log_eps_sub,
            sub_rhs,
            b_absorbed,
            dominates,
        })
    }

    /// Minimal rounds for `sup ‖π_t - π̃ᵏ_t‖₁ ≤ eps_acc · e^{-m}`.
    pub fn required_n_posterior(&self, eps_acc: f64, m: f64) -> Result<usize> {
        let chain = self.posterior_chain(eps_acc, m)?;
        if !(chain.b_absorbed && chain.dominates) {
            return Err(Error::Numeric(format!(
                "constant assembly does not close: {chain:?}"
            )));
        }
        solve_min_n(self.tau, self.inputs.gamma, chain.rhs, self.round_floor())
    }
}

/// Intermediate constants of the posterior condition, kept for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub c1: f64,
    pub c2: f64,
    pub c0: f64,
    pub c0_tilde: f64,
    pub c2_tilde: f64,
    pub c: f64,
    /// `cτCNT log(CST/ε) + τm`.
    pub rhs: f64,
    /// Log of the accuracy handed to the unnormalized guarantee.
    pub log_eps_sub: f64,
    /// Unnormalized right side at that accuracy.
    pub sub_rhs: f64,
    pub b_absorbed: bool,
    pub dominates: bool,
}

/// Smallest `n ≥ n_floor` with `n - τ log(γ n) ≥ b`.
///
/// The left side is convex in `n` with its minimum at `n = τ`, so below
/// `max(n_floor, τ)` only `n_floor` itself can qualify.
pub fn solve_min_n(tau: f64, gamma: f64, b: f64, n_floor: usize) -> Result<usize> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(param(format!(
            "mixing time must be finite and nonnegative, got {tau}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(param(format!("gamma must be positive, got {gamma}")));
    }
    if b.is_nan() || b == f64::INFINITY {
        return Err(param(format!("right side must be finite, got {b}")));
    }
    if n_floor < 2 {
        return Err(param(format!(
            "round floor must be at least 2, got {n_floor}"
        )));
    }
    let lhs = |n: usize| n as f64 - tau * (gamma * n as f64).ln();
    if lhs(n_floor) >= b {
        return Ok(n_floor);
    }
    let mut lo = n_floor.max(tau.ceil() as usize);
    if lhs(lo) >= b {
        return Ok(lo);
    }
    let mut hi = lo.max(1);
    while lhs(hi) < b {
        lo = hi;
        hi = hi
            .checked_mul(2)
            .ok_or_else(|| Error::Numeric(format!("no round count reaches {b}")))?;
    }
    // lhs(lo) < b ≤ lhs(hi), increasing on [lo, hi]
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if lhs(mid) >= b {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Lemma-style floor `1 - (T+1)^{1-CN} e^{-CN}` on the event probability.
pub fn probability_floor(c: f64, total_dim: usize, horizon: usize) -> f64 {
    let cn = c * total_dim as f64;
    -((1.0 - cn) * ((horizon + 1) as f64).ln() - cn).exp_m1()
}

/// `βCN(1 + log(T+1))`.
pub fn event_threshold(c: f64, beta: f64, total_dim: usize, horizon: usize) -> f64 {
    beta * c * total_dim as f64 * envelope_factor(horizon)
}

/// Outcome of checking one trajectory against the energy envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventCheck {
    pub holds: bool,
    /// Threshold minus the largest energy; positive iff the event holds.
    pub margin: f64,
    pub max_energy: f64,
}

/// Whether `sup_{t ≤ T} ‖y_t‖₂² < βCN(1 + log(T+1))`, where `T` is the
/// last time in `observations`.
pub fn trajectory_event_check(
    observations: &[Vec<DVector<f64>>],
    c: f64,
    beta: f64,
    total_dim: usize,
) -> Result<EventCheck> {
    if observations.is_empty() {
        return Err(param("no observations"));
    }
    let horizon = observations.len() - 1;
    let max_energy = observations
        .iter()
        .map(|y_t| y_t.iter().map(|y| y.norm_squared()).sum::<f64>())
        .fold(0.0, f64::max);
    let threshold = event_threshold(c, beta, total_dim, horizon);
    Ok(EventCheck {
        holds: max_energy < threshold,
        margin: threshold - max_energy,
        max_energy,
    })
}

fn max_energy(sim: &SimulationRun) -> f64 {
    (0..=sim.horizon())
        .map(|t| sim.energy(t))
        .fold(0.0, f64::max)
}

/// Grid of candidate `β` values: `1.1, 1.2, …, 8.0`.
pub fn beta_grid() -> Vec<f64> {
    (11..=80).map(|i| i as f64 / 10.0).collect()
}

/// Result of [`calibrate_beta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCalibration {
    pub beta: f64,
    pub frequency: f64,
    pub floor: f64,
    pub trials: usize,
    /// Seed of the calibration stream the trial seeds were drawn from.
    pub base_seed: u64,
}

/// Trial seeds for calibration; the top bit keeps them apart from the
/// small seeds used for runs.
pub fn calibration_seeds(base_seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = stream(base_seed, Stream::Calibration);
    (0..trials)
        .map(|_| rng.random::<u64>() | (1 << 63))
        .collect()
}

/// Smallest grid `β` whose event frequency over `trials` simulated
/// trajectories meets the probability floor.
pub fn calibrate_beta(
    model: &HmmModel,
    c: f64,
    horizon: usize,
    trials: usize,
    base_seed: u64,
) -> Result<BetaCalibration> {
    if trials == 0 {
        return Err(param("calibration needs at least one trial"));
    }
    let n = model.total_dim();
    let energies: Vec<f64> = calibration_seeds(base_seed, trials)
        .into_par_iter()
        .map(|seed| simulate(model, horizon, seed).map(|sim| max_energy(&sim)))
        .collect::<Result<_>>()?;
    let floor = probability_floor(c, n, horizon);
    for beta in beta_grid() {
        let threshold = event_threshold(c, beta, n, horizon);
        let hits = energies.iter().filter(|&&e| e < threshold).count();
        let frequency = hits as f64 / trials as f64;
        if frequency >= floor {
            return Ok(BetaCalibration {
                beta,
                frequency,
                floor,
                trials,
                base_seed,
            });
        }
    }
    Err(Error::Assumption(format!(
        "no beta up to 8 meets the event floor {floor} over {trials} trials"
    )))
}

/// Outcome of one telescoping-inequality evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelescopingOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Maximum absolute column sum.
pub fn l1_induced_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Compares `‖ΠAᵢ - ΠBᵢ‖` with the telescoping sum, in the ℓ₁-induced
/// norm. Products run left to right.
pub fn telescoping_check(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Result<TelescopingOutcome> {
    if a.len() != b.len() || a.is_empty() {
        return Err(param(format!(
            "need two non-empty lists of equal length, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d = a[0].nrows();
    if a.iter().chain(b).any(|m| m.nrows() != d || m.ncols() != d) {
        return Err(param(format!("every matrix must be {d}x{d}")));
    }
    let product = |ms: &[DMatrix<f64>]| ms.iter().skip(1).fold(ms[0].clone(), |acc, m| acc * m);
    let lhs = l1_induced_norm(&(product(a) - product(b)));
    let na: Vec<f64> = a.iter().map(l1_induced_norm).collect();
    let nb: Vec<f64> = b.iter().map(l1_induced_norm).collect();
    let mut rhs = 0.0;
    for i in 0..a.len() {
        let before: f64 = na[..i].iter().product();
        let after: f64 = nb[i + 1..].iter().product();
        rhs += before * after * l1_induced_norm(&(&a[i] - &b[i]));
    }
    // rounding in the two products is of order u·len·Π‖·‖
    let roundoff = 8.0
        * f64::EPSILON
        * (a.len() * d) as f64
        * (na.iter().product::<f64>() + nb.iter().product::<f64>());
    Ok(TelescopingOutcome {
        lhs,
        rhs,
        holds: lhs <= rhs + roundoff,
    })
}

/// Settings for [`verify_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub seeds: Vec<u64>,
    /// Accuracy for the unnormalized and posterior guarantees.
    pub eps_acc: f64,
    /// Extra decay exponents for the posterior guarantee.
    pub m_values: Vec<f64>,
}

/// One guarantee checked over the seeds inside the event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    /// Rounds per measurement time used for the check, if any.
    pub n: Option<usize>,
    pub bound: f64,
    /// Worst observed value over event seeds (`None` when none qualify).
    pub observed: Option<f64>,
    /// Worst observed value over the remaining seeds, for reference.
    pub observed_outside_event: Option<f64>,
    /// `true` for lower bounds (observed must not fall below `bound`).
    pub lower: bool,
    pub violations: usize,
    pub satisfied: bool,
}

/// Report of [`verify_bounds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub constants: StabilityConstants,
    pub posterior_chains: Vec<(f64, PosteriorChain)>,
    pub seeds: usize,
    pub event_count: usize,
    pub event_rate: f64,
    pub floor: f64,
    /// `floor - 3σ` with the binomial σ at the floor.
    pub event_rate_threshold: f64,
    pub event_rate_ok: bool,
    pub checks: Vec<BoundCheck>,
}

impl BoundsReport {
    pub fn all_satisfied(&self) -> bool {
        self.event_rate_ok && self.checks.iter().all(|c| c.satisfied)
    }
}

/// Per-seed measurements; `values[i]` belongs to check `i`.
struct SeedOutcome {
    holds: bool,
    values: Vec<f64>,
}

fn summarize(
    name: &str,
    n: Option<usize>,
    bound: f64,
    lower: bool,
    idx: usize,
    outcomes: &[SeedOutcome],
) -> BoundCheck {
    let worst = |inside: bool| {
        outcomes
            .iter()
            .filter(|o| o.holds == inside)
            .map(|o| o.values[idx])
            .reduce(|a, b| if lower { a.min(b) } else { a.max(b) })
    };
    let violations = outcomes
        .iter()
        .filter(|o| o.holds)
        .filter(|o| {
            if lower {
                o.values[idx] < bound
            } else {
                o.values[idx] > bound
            }
        })
        .count();
    BoundCheck {
        name: name.to_string(),
        n,
        bound,
        observed: worst(true),
        observed_outside_event: worst(false),
        lower,
        violations,
        satisfied: violations == 0,
    }
}

/// Runs every guarantee at its minimal round count on each seed and checks
/// it on the seeds inside the event.
pub fn verify_bounds(
    model: &HmmModel,
    w: &MixingMatrix,
    constants: &StabilityConstants,
    cfg: &VerifyConfig,
) -> Result<BoundsReport> {
    let i = &constants.inputs;
    if cfg.seeds.is_empty() {
        return Err(param("no seeds to verify"));
    }
    if w.sensor_count() != model.sensor_count() || i.sensors != model.sensor_count() {
        return Err(param(
            "model, mixing matrix and constants disagree on the sensor count",
        ));
    }
    let eps = i.eps_max;
    let n31 = constants.required_n_iterate_floor()?;
    let n33 = constants.required_n_unnormalized(cfg.eps_acc)?;
    let mut chains = Vec::new();
    let mut n40 = Vec::new();
    for &m in &cfg.m_values {
        chains.push((m, constants.posterior_chain(cfg.eps_acc, m)?));
        n40.push(constants.required_n_posterior(cfg.eps_acc, m)?);
    }

    let outcomes: Vec<SeedOutcome> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedOutcome> {
            let sim = simulate(model, i.horizon, seed)?;
            let event = trajectory_event_check(&sim.observations, i.c, i.beta, i.total_dim)?;
            let central = run_centralized(model, &sim)?;
            let run_at = |n: usize| {
                run_distributed(
                    model,
                    &sim,
                    Averaging::Admm { w, eps, n },
                    &RunOptions::default(),
                    None,
                )
            };
            let r31 = run_at(n31)?;
            let r33 = if n33 == n31 {
                r31.clone()
            } else {
                run_at(n33)?
            };
            let mut values = vec![
                r31.max_statistic_norm,
                r31.min_iterate,
                l1_disagreement(&central, &r33)?
                    .sup_log_unnormalized()
                    .exp(),
                central
                    .iter()
                    .map(|e| e.log_l1_norm())
                    .fold(f64::INFINITY, f64::min),
            ];
            for &n in &n40 {
                values.push(l1_disagreement(&central, &run_at(n)?)?.sup_posterior());
            }
            Ok(SeedOutcome {
                holds: event.holds,
                values,
            })
        })
        .collect::<Result<_>>()?;

    let seeds = outcomes.len();
    let event_count = outcomes.iter().filter(|o| o.holds).count();
    let event_rate = event_count as f64 / seeds as f64;
    let floor = probability_floor(i.c, i.total_dim, i.horizon);
    let event_rate_threshold = floor - 3.0 * binomial_frequency_sigma(floor, seeds);

    let mut checks = vec![
        summarize(
            "growth of initial values",
            Some(n31),
            constants.growth_bound(),
            false,
            0,
            &outcomes,
        ),
        summarize(
            "iterate lower bound",
            Some(n31),
            constants.iterate_floor(),
            true,
            1,
            &outcomes,
        ),
        summarize(
            "unnormalized accuracy",
            Some(n33),
            cfg.eps_acc,
            false,
            2,
            &outcomes,
        ),
        summarize(
            "unnormalized filter lower bound (log)",
            None,
            constants.log_b,
            true,
            3,
            &outcomes,
        ),
    ];
    for (idx, (&m, &n)) in cfg.m_values.iter().zip(&n40).enumerate() {
        checks.push(summarize(
            &format!("posterior accuracy, m = {m}"),
            Some(n),
            cfg.eps_acc * (-m).exp(),
            false,
            4 + idx,
            &outcomes,
        ));
    }
    Ok(BoundsReport {
        constants: *constants,
        posterior_chains: chains,
        seeds,
        event_count,
        event_rate,
        floor,
        event_rate_threshold,
        event_rate_ok: event_rate >= event_rate_threshold,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_inputs() -> ConstantInputs {
        ConstantInputs {
            c: 1.0,
            beta: 2.0,
            lambda_inf: std::f64::consts::E,
            lambda_sup: std::f64::consts::E,
            mu_sup: 0.0,
            gamma: 1.0,
            rho: (-1.0f64).exp(),
            eps_max: 1.0,
            horizon: 0,
            total_dim: 1,
            sensors: 1,
        }
    }

    #[test]
    fn delta_and_eta_examples() {
        let k = StabilityConstants::new(unit_inputs()).unwrap();
        assert_relative_eq!(
            k.delta,
            2.0 * (std::f64::consts::E + 1.0),
            max_relative = 1e-15
        );
        assert!((k.delta - 7.43656).abs() < 1e-5);
        assert!((k.eta.unwrap() - 22.30969).abs() < 1e-5);
        assert_relative_eq!(k.tau, 1.0, max_relative = 1e-15);
        // all multiplicative factors are one
        assert_relative_eq!(k.growth_bound(), k.delta, max_relative = 1e-15);
    }

    #[test]
    fn probability_floor_example() {
        let p = probability_floor(1.0, 2, 1);
        assert_relative_eq!(p, 1.0 - 0.5 * (-2.0f64).exp(), max_relative = 1e-15);
        assert!((p - 0.93233).abs() < 1e-5);
        for (c, n, t) in [(1.0, 2, 0), (1.5, 3, 10), (1.0, 4, 100)] {
            let p = probability_floor(c, n, t);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn zero_observations_satisfy_the_event() {
        let obs = vec![vec![DVector::zeros(2), DVector::zeros(1)]; 4];
        let e = trajectory_event_check(&obs, 1.0, 2.0, 3).unwrap();
        assert!(e.holds);
        assert_relative_eq!(
            e.margin,
            2.0 * 3.0 * (1.0 + 4f64.ln()),
            max_relative = 1e-15
        );
    }

    #[test]
    fn e_lower_bound_example() {
        let mut inp = unit_inputs();
        inp.beta = 1.0 + 1e-12;
        let k = StabilityConstants::new(inp).unwrap();
        let beta: f64 = inp.beta;
        let want = -0.5 - (beta.sqrt()).powi(2) / (2.0 * std::f64::consts::E);
        assert_relative_eq!(k.log_b, want, max_relative = 1e-14);
    }

    #[test]
    fn e_lower_bound_decreases_in_horizon() {
        let mut prev = f64::INFINITY;
        for t in 0..50 {
            let k = StabilityConstants::new(ConstantInputs {
                horizon: t,
                ..unit_inputs()
            })
            .unwrap();
            assert!(k.log_b < prev);
            prev = k.log_b;
        }
    }

    #[test]
    fn solve_min_n_examples() {
        assert_eq!(solve_min_n(1.0, 1.0, 5.0, 2).unwrap(), 7);
        assert_eq!(solve_min_n(1.0, 1.0, -10.0, 4).unwrap(), 4);
        // tau → 0: the floor already satisfies any right side of order tau
        assert_eq!(solve_min_n(1e-300, 1.0, 0.0, 3).unwrap(), 3);
        assert!(solve_min_n(1.0, 1.0, 5.0, 1).is_err());
        assert!(solve_min_n(1.0, 0.0, 5.0, 2).is_err());
        assert!(solve_min_n(1.0, 1.0, f64::NAN, 2).is_err());
    }

    #[test]
    fn unnormalized_example_reduces_to_solver() {
        // η S^{1.5} C (1 + log(T+1)) / ε = e⁵ with τ = γ = 1
        let k = StabilityConstants::new(unit_inputs()).unwrap();
        let eps = k.eta.unwrap() * k.scale() / 5f64.exp();
        assert!(eps < 1.0);
        assert_relative_eq!(k.unnormalized_rhs(eps).unwrap(), 5.0, max_relative = 1e-12);
        assert_eq!(k.required_n_unnormalized(eps).unwrap(), 7);
        assert!(k.required_n_unnormalized(1.0).is_err());
        assert!(k.required_n_unnormalized(0.0).is_err());
    }

    #[test]
    fn accuracy_shift_is_log_hundred_tau() {
        let k = StabilityConstants::new(ConstantInputs {
            rho: 0.9,
            ..unit_inputs()
        })
        .unwrap();
        let d = k.unnormalized_rhs(0.01).unwrap() - k.unnormalized_rhs(1.0 - 1e-15).unwrap();
        assert_relative_eq!(d, k.tau * 100f64.ln(), max_relative = 1e-9);
    }

    #[test]
    fn iterate_floor_needs_lambda_inf_above_one() {
        let k = StabilityConstants::new(ConstantInputs {
            lambda_inf: 0.9,
            ..unit_inputs()
        })
        .unwrap();
        assert!(matches!(
            k.required_n_iterate_floor(),
            Err(Error::Assumption(_))
        ));
        assert!(k.eta.is_none());
    }

    fn chain_inputs(t: usize) -> ConstantInputs {
        ConstantInputs {
            c: 1.0,
            beta: 2.5,
            lambda_inf: 2.8,
            lambda_sup: 3.6,
            mu_sup: 4.0,
            gamma: 1.3,
            rho: 0.8,
            eps_max: 2.0,
            horizon: t,
            total_dim: 16,
            sensors: 8,
        }
    }

    #[test]
    fn posterior_chain_closes_and_m_shift_is_tau_m() {
        for t in [1, 2, 5, 10, 20, 40] {
            let k = StabilityConstants::new(chain_inputs(t)).unwrap();
            for eps in [1.0, 0.1, 1e-6] {
                let ch = k.posterior_chain(eps, 0.0).unwrap();
                assert!(ch.b_absorbed && ch.dominates, "{t} {eps} {ch:?}");
            }
            let n0 = k.required_n_posterior(0.1, 0.0).unwrap();
            let n5 = k.required_n_posterior(0.1, 5.0).unwrap();
            let shift = n5 - n0;
            assert!(
                (shift as f64 - 5.0 * k.tau).abs() <= 1.0 + 1e-9,
                "{shift} vs {}",
                5.0 * k.tau
            );
        }
    }

    #[test]
    fn posterior_rhs_scales_loglinearly_in_horizon() {
        for t in [10, 20, 40] {
            let a = StabilityConstants::new(chain_inputs(t))
                .unwrap()
                .posterior_chain(0.1, 0.0)
                .unwrap()
                .rhs;
            let b = StabilityConstants::new(chain_inputs(2 * t))
                .unwrap()
                .posterior_chain(0.1, 0.0)
                .unwrap()
                .rhs;
            let ratio = b / a;
            assert!((1.8..=2.6).contains(&ratio), "T = {t}: ratio {ratio}");
        }
    }

    #[test]
    fn posterior_hypotheses() {
        let k = StabilityConstants::new(ConstantInputs {
            sensors: 1,
            ..chain_inputs(5)
        })
        .unwrap();
        assert!(matches!(
            k.posterior_chain(0.1, 0.0),
            Err(Error::Parameter(_))
        ));
        let k = StabilityConstants::new(chain_inputs(0)).unwrap();
        assert!(matches!(
            k.posterior_chain(0.1, 0.0),
            Err(Error::Parameter(_))
        ));
        let k = StabilityConstants::new(chain_inputs(5)).unwrap();
        assert!(k.posterior_chain(1.5, 0.0).is_err());
        assert!(k.posterior_chain(0.5, -1.0).is_err());
        let k = StabilityConstants::new(ConstantInputs {
            lambda_sup: 2.0,
            lambda_inf: 1.5,
            ..chain_inputs(5)
        })
        .unwrap();
        assert!(matches!(
            k.posterior_chain(0.1, 0.0),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn iterate_floor_nondecreasing_in_horizon() {
        let mut prev = 0;
        for t in [1, 2, 4, 8, 16, 32, 64, 128] {
            let k = StabilityConstants::new(chain_inputs(t)).unwrap();
            let n = k.required_n_iterate_floor().unwrap();
            assert!(n >= prev);
            // re-substitution
            let lhs = n as f64 - k.tau * (k.inputs.gamma * n as f64).ln();
            assert!(lhs >= k.iterate_floor_rhs().unwrap() || n == k.round_floor());
            prev = n;
        }
    }

    #[test]
    fn telescoping_trivial_cases() {
        let a = vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]); 3];
        let same = telescoping_check(&a, &a).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert_eq!(same.rhs, 0.0);
        assert!(same.holds);
        let b = vec![DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0])];
        let one = telescoping_check(&a[..1], &b).unwrap();
        assert_eq!(one.lhs, one.rhs);
        assert!(telescoping_check(&a, &b).is_err());
    }

    #[test]
    fn beta_grid_shape() {
        let g = beta_grid();
        assert_eq!(g.len(), 70);
        assert_eq!(g[0], 1.1);
        assert_eq!(*g.last().unwrap(), 8.0);
        let seeds = calibration_seeds(0, 5);
        assert!(seeds.iter().all(|&s| s >= 1 << 63));
    }
}
