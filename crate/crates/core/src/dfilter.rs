//! Two-time-scale distributed filter.
//!
//! At every measurement time each state's local statistics are averaged by
//! one consensus instance run for a fixed number of rounds; every sensor then
//! advances its own copy of the unnormalized filter with the likelihoods its
//! consensus iterate implies.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{run_with_trace, ConsensusInstance};
use crate::error::{param, Error, Result};
use crate::hmm::{
    l1_distance, log_likelihood_from_average, network_average, HmmModel, ScaledVector,
    SimulationRun,
};
use crate::mixing::MixingMatrix;

/// How sensors obtain the network average of each local statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Averaging<'w> {
    /// `n` consensus rounds on `w` with augmentation `eps`.
    Admm {
        w: &'w MixingMatrix,
        eps: f64,
        n: usize,
    },
    /// The exact average at every sensor.
    Exact,
}

/// Per-time outputs of a distributed run.
#[derive(Debug, Clone, Default)]
pub struct DistributedRun {
    /// `estimates[t][k]`: sensor `k`'s unnormalized filter at time `t`.
    pub estimates: Vec<Vec<ScaledVector>>,
    /// Smallest consensus iterate `ϑʲ(n,k)` over all `(t, j, k)`.
    pub min_iterate: f64,
    /// Largest `‖θ_t(x_j)‖₂` over all `(t, j)`.
    pub max_statistic_norm: f64,
    /// Posterior error against the centralized filter for every round
    /// `1..=n`, for the traced sensors.
    pub posterior_traces: Vec<PosteriorTrace>,
}

/// `‖π_t - π̃ᵏ_t(n')‖₁` for `n' = 1..=n` within one measurement time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrace {
    pub t: usize,
    pub sensor: usize,
    pub errors: Vec<f64>,
}

/// Options for [`run_distributed`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Sensors whose per-round posterior error is retained; needs the
    /// centralized run passed alongside.
    pub trace_sensors: Vec<usize>,
}

/// Final iterates, indexed `[state][sensor]`.
type Iterates = Vec<Vec<f64>>;
/// Primal iterates of one consensus run, indexed `[round][sensor]`.
type Rounds = Vec<Vec<f64>>;

/// Consensus iterates at one time and, when `keep_rounds` is set, every
/// round's iterates per state.
fn averaged_statistics(
    stats: &[Vec<f64>],
    averaging: Averaging<'_>,
    keep_rounds: bool,
) -> Result<(Iterates, Option<Vec<Rounds>>)> {
    let s = stats[0].len();
    match averaging {
        Averaging::Exact => Ok((
            stats
                .iter()
                .map(|col| vec![network_average(col); s])
                .collect(),
            None,
        )),
        // a single sensor's value is its own average: skip the iteration,
        // which only reaches it asymptotically
        Averaging::Admm { .. } if s == 1 => Ok((
            stats.iter().map(|col| vec![network_average(col)]).collect(),
            None,
        )),
        Averaging::Admm { w, eps, n } => {
            if n == 0 {
                return Err(param("consensus rounds per step must be at least 1"));
            }
            let runs: Vec<(Vec<f64>, Option<Rounds>)> = stats
                .par_iter()
                .map(|col| {
                    let mut inst = ConsensusInstance::new(w, eps, col)?;
                    if keep_rounds {
                        let trace = run_with_trace(&mut inst, n, true);
                        Ok((inst.primal().to_vec(), trace.primals))
                    } else {
                        inst.run_to(n);
                        Ok((inst.primal().to_vec(), None))
                    }
                })
                .collect::<Result<_>>()?;
            let mut finals = Vec::with_capacity(runs.len());
            let mut rounds = Vec::with_capacity(runs.len());
            for (f, r) in runs {
                finals.push(f);
                rounds.push(r.unwrap_or_default());
            }
            Ok((finals, keep_rounds.then_some(rounds)))
        }
    }
}

fn sensor_log_likelihoods(theta: &[Vec<f64>], k: usize, t: usize) -> Result<Vec<f64>> {
    theta
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let v = col[k];
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite likelihood at t = {t}, sensor {k}, state {j}"
                )));
            }
            Ok(log_likelihood_from_average(v))
        })
        .collect()
}

/// Advances every sensor's filter by one measurement time.
pub fn distributed_step(
    states: &[ScaledVector],
    model: &HmmModel,
    y_t: &[nalgebra::DVector<f64>],
    t: usize,
    averaging: Averaging<'_>,
) -> Result<Vec<ScaledVector>> {
    let stats = model.local_statistics(y_t, t)?;
    let (theta, _) = averaged_statistics(&stats, averaging, false)?;
    states
        .iter()
        .enumerate()
        .map(|(k, e)| e.advance(model.transition(), &sensor_log_likelihoods(&theta, k, t)?))
        .collect()
}

/// Runs the distributed filter over a whole simulation.
///
/// `centralized` is required only when `opts.trace_sensors` is non-empty.
pub fn run_distributed(
    model: &HmmModel,
    sim: &SimulationRun,
    averaging: Averaging<'_>,
    opts: &RunOptions,
    centralized: Option<&[ScaledVector]>,
) -> Result<DistributedRun> {
    let s = model.sensor_count();
    if let Averaging::Admm { w, .. } = averaging {
        if w.sensor_count() != s {
            return Err(param(format!(
                "mixing matrix has {} sensors, model has {s}",
                w.sensor_count()
            )));
        }
    }
    let tracing = !opts.trace_sensors.is_empty();
    if tracing && centralized.is_none() {
        return Err(param("per-round traces need the centralized run"));
    }
    if let Some(&k) = opts.trace_sensors.iter().find(|&&k| k >= s) {
        return Err(param(format!("traced sensor {k} out of range")));
    }

    let mut current = vec![ScaledVector::from_distribution(model.pi_init()); s];
    let mut run = DistributedRun {
        min_iterate: f64::INFINITY,
        ..Default::default()
    };
    for (t, y_t) in sim.observations.iter().enumerate() {
        let stats = model.local_statistics(y_t, t)?;
        for col in &stats {
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            run.max_statistic_norm = run.max_statistic_norm.max(norm);
        }
        let (theta, rounds) = averaged_statistics(&stats, averaging, tracing)?;
        for col in &theta {
            for &v in col {
                run.min_iterate = run.min_iterate.min(v);
            }
        }

        if let (Some(rounds), Some(central)) = (rounds.as_ref(), centralized) {
            let pi = central[t].normalized();
            for &k in &opts.trace_sensors {
                let n = rounds[0].len();
                let mut errors = Vec::with_capacity(n);
                for r in 0..n {
                    let ll: Vec<f64> = rounds
                        .iter()
                        .map(|per_round| log_likelihood_from_average(per_round[r][k]))
                        .collect();
                    let next = current[k].advance(model.transition(), &ll)?;
                    errors.push(l1_distance(pi, next.normalized()));
                }
                run.posterior_traces.push(PosteriorTrace {
                    t,
                    sensor: k,
                    errors,
                });
            }
        }

        current = current
            .iter()
            .enumerate()
            .map(|(k, e)| e.advance(model.transition(), &sensor_log_likelihoods(&theta, k, t)?))
            .collect::<Result<_>>()?;
        run.estimates.push(current.clone());
    }
    Ok(run)
}

/// Disagreement between the centralized and one sensor's filter at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisagreementRow {
    pub t: usize,
    pub sensor: usize,
    /// `‖π_t - π̃ᵏ_t‖₁`.
    pub posterior: f64,
    /// `ln ‖E_t - Ẽᵏ_t‖₁` (`-inf` when equal).
    pub log_unnormalized: f64,
    /// `ln ‖E_t‖₁`.
    pub log_norm: f64,
}

impl DisagreementRow {
    /// `‖E_t - Ẽᵏ_t‖₁`, possibly underflowing to zero.
    pub fn unnormalized(&self) -> f64 {
        self.log_unnormalized.exp()
    }

    /// `2 ‖E_t - Ẽᵏ_t‖₁ / ‖E_t‖₁`, the ceiling on the posterior disagreement.
    pub fn posterior_ceiling(&self) -> f64 {
        2.0 * (self.log_unnormalized - self.log_norm).exp()
    }
}

/// Full disagreement table with running suprema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisagreementTable {
    pub rows: Vec<DisagreementRow>,
    /// `running_sup_posterior[t]`: sup over `t' ≤ t` and all sensors.
    pub running_sup_posterior: Vec<f64>,
    /// Same for `ln ‖E - Ẽ‖₁`.
    pub running_sup_log_unnormalized: Vec<f64>,
}

impl DisagreementTable {
    pub fn sup_posterior(&self) -> f64 {
        self.running_sup_posterior.last().copied().unwrap_or(0.0)
    }

    pub fn sup_log_unnormalized(&self) -> f64 {
        self.running_sup_log_unnormalized
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }

    /// Sup over `t` of the posterior disagreement restricted to `sensors`.
    pub fn sup_posterior_over(&self, sensors: &[usize]) -> f64 {
        self.rows
            .iter()
            .filter(|r| sensors.contains(&r.sensor))
            .map(|r| r.posterior)
            .fold(0.0, f64::max)
    }
}

/// Tabulates `‖π - π̃ᵏ‖₁` and `‖E - Ẽᵏ‖₁` for every `(t, k)`.
pub fn l1_disagreement(
    centralized: &[ScaledVector],
    distributed: &DistributedRun,
) -> Result<DisagreementTable> {
    if centralized.len() != distributed.estimates.len() {
        return Err(param(format!(
            "horizon mismatch: {} centralized steps, {} distributed",
            centralized.len(),
            distributed.estimates.len()
        )));
    }
    let mut rows = Vec::new();
    let mut running_sup_posterior = Vec::with_capacity(centralized.len());
    let mut running_sup_log_unnormalized = Vec::with_capacity(centralized.len());
    let (mut sup_p, mut sup_u) = (0.0f64, f64::NEG_INFINITY);
    for (t, (e, per_sensor)) in centralized.iter().zip(&distributed.estimates).enumerate() {
        for (k, et) in per_sensor.iter().enumerate() {
            let row = DisagreementRow {
                t,
                sensor: k,
                posterior: l1_distance(e.normalized(), et.normalized()),
                log_unnormalized: e.log_l1_distance(et),
                log_norm: e.log_l1_norm(),
            };
            sup_p = sup_p.max(row.posterior);
            sup_u = sup_u.max(row.log_unnormalized);
            rows.push(row);
        }
        running_sup_posterior.push(sup_p);
        running_sup_log_unnormalized.push(sup_u);
    }
    Ok(DisagreementTable {
        rows,
        running_sup_posterior,
        running_sup_log_unnormalized,
    })
}
