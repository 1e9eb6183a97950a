//! Independent oracles and random instance generators shared by the
//! integration targets.
#![allow(dead_code)]

use dhmm_core::graph::sample_connected_rgg;
use dhmm_core::hmm::{CovarianceSpec, HmmModel, MeanSpec, ModelConfig, SensorSpec, SimulationRun};
use dhmm_core::mixing::{Construction, MixingMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Posterior and `ln ‖E_t‖₁` for `t = 0..=T` by summing over every state
/// path `x_{-1}, …, x_t`.
///
/// Densities use explicit inverses and determinants and drop the `(2π)`
/// factor, which is the normalization the recursive filter carries.
pub fn brute_force_filter(model: &HmmModel, sim: &SimulationRun) -> Vec<(Vec<f64>, f64)> {
    let l = model.state_count();
    let p = model.transition();
    let lik = |t: usize, j: usize| -> f64 {
        let mut log = 0.0;
        for (k, y) in sim.observations[t].iter().enumerate() {
            let cov = model.covariance(k, j);
            let inv = cov.clone().try_inverse().expect("covariance is invertible");
            let r = y - model.mean(k, j);
            log += (r.transpose() * &inv * &r)[(0, 0)] + cov.determinant().ln();
        }
        (-0.5 * log).exp()
    };
    let horizon = sim.observations.len() - 1;
    let table: Vec<Vec<f64>> = (0..=horizon)
        .map(|t| (0..l).map(|j| lik(t, j)).collect())
        .collect();
    let mut out = Vec::new();
    for t in 0..=horizon {
        let mut mass = vec![0.0; l];
        let len = t + 2;
        let mut path = vec![0usize; len];
        loop {
            let mut w = model.pi_init()[path[0]];
            for s in 1..len {
                w *= p[(path[s], path[s - 1])] * table[s - 1][path[s]];
            }
            mass[path[len - 1]] += w;
            // Odometer over paths.
            let mut i = 0;
            while i < len {
                path[i] += 1;
                if path[i] < l {
                    break;
                }
                path[i] = 0;
                i += 1;
            }
            if i == len {
                break;
            }
        }
        let total: f64 = mass.iter().sum();
        out.push((mass.iter().map(|m| m / total).collect(), total.ln()));
    }
    out
}

fn random_stochastic(rng: &mut ChaCha8Rng, l: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..l).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Random Gaussian-finite model with `l` states and `s` sensors of
/// dimension 1 or 2, per-state means and covariances.
pub fn random_model(rng: &mut ChaCha8Rng, l: usize, s: usize) -> HmmModel {
    let sensors = (0..s)
        .map(|_| {
            let d = rng.random_range(1..=2usize);
            let values = (0..l)
                .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
                .collect();
            let matrices = (0..l)
                .map(|_| {
                    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                    let c = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
                    (0..d)
                        .map(|i| (0..d).map(|j| c[(i, j)]).collect())
                        .collect()
                })
                .collect();
            SensorSpec {
                mean: MeanSpec::Table { values },
                covariance: CovarianceSpec::PerState { matrices },
            }
        })
        .collect();
    let cfg = ModelConfig {
        states: (0..l).map(|j| j as f64).collect(),
        transition: (0..l).map(|_| random_stochastic(rng, l)).collect(),
        pi_init: random_stochastic(rng, l),
        sensors,
    };
    HmmModel::new(cfg).expect("random model is valid")
}

/// Random connected graph with `2..=max_s` sensors and its mixing matrix.
pub fn random_network(rng: &mut ChaCha8Rng, max_s: usize) -> MixingMatrix {
    let s = rng.random_range(2..=max_s);
    let r = rng.random_range(0.3..0.8);
    let g = sample_connected_rgg(s, r, rng.random(), u32::MAX).expect("connected graph");
    let c = if rng.random_bool(0.5) {
        Construction::MaxDegree
    } else {
        Construction::Metropolis
    };
    c.build(&g).expect("mixing matrix")
}

/// Random values with mixed signs and magnitudes.
pub fn random_values(rng: &mut ChaCha8Rng, s: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-2.0..3.0));
    (0..s)
        .map(|_| scale * rng.random_range(-1.0..1.0))
        .collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    DVector::from_column_slice(v).norm()
}

/// Random matrix with entries in `[0, 1)` or of either sign.
pub fn random_matrix(rng: &mut ChaCha8Rng, d: usize, signed: bool) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| {
        if signed {
            rng.random_range(-1.0..1.0)
        } else {
            rng.random::<f64>()
        }
    })
}
