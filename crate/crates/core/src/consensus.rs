//! ADMM average consensus.
//!
//! Each sensor `k` holds a value `θᵏ` and iterates a primal `ϑ(n,k)` and a
//! dual `ℓ(n,k)`; every primal converges to the network average. Rounds are
//! synchronous and sensor `k` reads only `ϑ(n,l)` for `l` in its
//! neighbourhood.

use std::io::Write;

use crate::error::{param, Result};
use crate::mixing::MixingMatrix;

/// Sees every neighbour read a round performs.
pub trait NeighborObserver {
    /// Sensor `k` read the primal of sensor `l`.
    fn read(&mut self, k: usize, l: usize);
}

impl NeighborObserver for () {
    #[inline]
    fn read(&mut self, _k: usize, _l: usize) {}
}

/// One averaging problem on a mixing matrix.
#[derive(Debug, Clone)]
pub struct ConsensusInstance<'w> {
    w: &'w MixingMatrix,
    eps: f64,
    values: Vec<f64>,
    primal: Vec<f64>,
    dual: Vec<f64>,
    n: usize,
}

impl<'w> ConsensusInstance<'w> {
    /// State at `n = 1`: `ϑ = θ/(1+ε)`, `ℓ = 0`.
    pub fn new(w: &'w MixingMatrix, eps: f64, values: &[f64]) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(param(format!("eps must be positive and finite, got {eps}")));
        }
        if values.len() != w.sensor_count() {
            return Err(param(format!(
                "{} initial values for {} sensors",
                values.len(),
                w.sensor_count()
            )));
        }
        let primal = values.iter().map(|v| v / (1.0 + eps)).collect();
        Ok(Self {
            w,
            eps,
            values: values.to_vec(),
            primal,
            dual: vec![0.0; values.len()],
            n: 1,
        })
    }

    /// Current iteration index (starts at 1).
    pub fn iteration(&self) -> usize {
        self.n
    }

    pub fn primal(&self) -> &[f64] {
        &self.primal
    }

    pub fn dual(&self) -> &[f64] {
        &self.dual
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Common limit of every primal.
    pub fn average(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `‖ϑ(n) - avg·1‖₂`.
    pub fn error(&self) -> f64 {
        let avg = self.average();
        self.primal
            .iter()
            .map(|v| (v - avg) * (v - avg))
            .sum::<f64>()
            .sqrt()
    }

    pub fn step(&mut self) {
        self.step_observed(&mut ());
    }

    /// One synchronous round, reporting each neighbour read to `obs`.
    pub fn step_observed<O: NeighborObserver>(&mut self, obs: &mut O) {
        let s = self.primal.len();
        let a = self.eps / (1.0 + self.eps);
        let b = self.eps / (2.0 * (1.0 + self.eps));
        let mut primal = Vec::with_capacity(s);
        let mut dual = Vec::with_capacity(s);
        for k in 0..s {
            let mut mix = 0.0;
            for &l in self.w.neighborhood(k) {
                obs.read(k, l);
                mix += self.w.weight(k, l) * self.primal[l];
            }
            primal.push(self.values[k] / (1.0 + self.eps) + self.dual[k] + a * mix);
            dual.push(self.dual[k] + b * (mix - self.primal[k]));
        }
        self.primal = primal;
        self.dual = dual;
        self.n += 1;
    }

    /// Advances until `ϑ(n_target)` is current.
    pub fn run_to(&mut self, n_target: usize) {
        while self.n < n_target {
            self.step();
        }
    }
}

/// Error trace of one consensus run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    /// `errors[n-1] = ‖ϑ(n) - ϑ(∞)‖₂` for `n = 1..=n_max`.
    pub errors: Vec<f64>,
    /// `primals[n-1] = ϑ(n)`, present when requested.
    pub primals: Option<Vec<Vec<f64>>>,
}

/// Runs `inst` up to iteration `n_max`, recording the error at every `n`.
pub fn run_with_trace(
    inst: &mut ConsensusInstance<'_>,
    n_max: usize,
    keep_primals: bool,
) -> ConsensusTrace {
    let mut errors = Vec::with_capacity(n_max);
    let mut primals = keep_primals.then(|| Vec::with_capacity(n_max));
    loop {
        errors.push(inst.error());
        if let Some(p) = primals.as_mut() {
            p.push(inst.primal().to_vec());
        }
        if inst.iteration() >= n_max {
            break;
        }
        inst.step();
    }
    ConsensusTrace { errors, primals }
}

/// First iteration at which the error bound for a general `eps` applies.
pub fn general_bound_start(eps: f64) -> usize {
    2usize.max((eps + 1.0).floor() as usize)
}

/// `‖θ‖₂ n ρ^{n-1} / (1+ε)` for a general `eps` with rate `rho = slem(eps, λ₂)`.
pub fn general_bound(theta_norm: f64, eps: f64, rho: f64, n: usize) -> f64 {
    theta_norm * n as f64 * rho.powi(n as i32 - 1) / (1.0 + eps)
}

/// Whether `n > 2 ε_max + 1`.
pub fn in_optimal_domain(n: usize, eps_max: f64) -> bool {
    n as f64 > 2.0 * eps_max + 1.0
}

/// `γ ‖θ‖₂ n ρ*^n`, the bound at the optimal `eps`.
pub fn optimal_bound(theta_norm: f64, gamma: f64, rho_star: f64, n: usize) -> f64 {
    gamma * theta_norm * n as f64 * rho_star.powi(n as i32)
}

/// Whether `n > max(2, ε_max)`.
pub fn in_uniform_domain(n: usize, eps_max: f64) -> bool {
    n as f64 > eps_max.max(2.0)
}

/// `‖θ‖₂ n ρ*^{n-1}`, uniform over `eps ∈ (0, ε_max]` at the optimum.
pub fn uniform_bound(theta_norm: f64, rho_star: f64, n: usize) -> f64 {
    theta_norm * n as f64 * rho_star.powi(n as i32 - 1)
}

/// First iteration at which the per-sensor bound applies: `⌊2 ε_max + 2⌋`.
pub fn iterate_bound_start(eps_max: f64) -> usize {
    (2.0 * eps_max + 2.0).floor() as usize
}

/// Parameters of the error bounds drawn next to a trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceBounds {
    pub theta_norm: f64,
    pub eps: f64,
    /// Rate at `eps`.
    pub rho: f64,
    pub gamma: f64,
    pub rho_star: f64,
    pub eps_max: f64,
}

/// Writes `n, ϑ(n,1..S), error, general bound, optimal bound` rows.
///
/// A bound column is left empty outside the bound's domain.
pub fn write_trace_csv<W: Write>(
    out: &mut W,
    trace: &ConsensusTrace,
    b: &TraceBounds,
) -> std::io::Result<()> {
    let primals = trace.primals.as_ref();
    let s = primals.and_then(|p| p.first()).map_or(0, |v| v.len());
    write!(out, "n")?;
    for k in 0..s {
        write!(out, ",theta_{k}")?;
    }
    writeln!(out, ",l2_error,general_bound,optimal_bound")?;
    for (i, err) in trace.errors.iter().enumerate() {
        let n = i + 1;
        write!(out, "{n}")?;
        if let Some(p) = primals {
            for v in &p[i] {
                write!(out, ",{v:e}")?;
            }
        }
        write!(out, ",{err:e},")?;
        if n >= general_bound_start(b.eps) {
            write!(out, "{:e}", general_bound(b.theta_norm, b.eps, b.rho, n))?;
        }
        write!(out, ",")?;
        if in_optimal_domain(n, b.eps_max) {
            write!(
                out,
                "{:e}",
                optimal_bound(b.theta_norm, b.gamma, b.rho_star, n)
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}
