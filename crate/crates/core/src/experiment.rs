//! Experiment configuration, orchestration and artifact emission.
//!
//! Seeds run in parallel; every artifact is written after all seeds finish,
//! in seed order, so reruns of the same configuration are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dfilter::{
    l1_disagreement, run_distributed, Averaging, DisagreementTable, PosteriorTrace, RunOptions,
};
use crate::error::{param, Error, Result};
use crate::graph::{sample_connected_rgg, GraphTopology, DEFAULT_MAX_RETRIES};
use crate::hmm::{mmse_estimate, run_centralized, simulate, HmmModel, ModelConfig};
use crate::mixing::{Construction, MixingMatrix, SpectrumReport};
use crate::numeric::stats::{linear_fit, median};
use crate::rng::{stream, Stream};
use crate::stability::{
    calibrate_beta, probability_floor, trajectory_event_check, BetaCalibration, ConstantInputs,
    EventCheck, StabilityConstants,
};

/// Trials used when `β` is calibrated rather than given.
pub const CALIBRATION_TRIALS: usize = 2000;

/// Where the sensor network comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopologySpec {
    /// Random geometric graph; without a seed, run seed `k` draws its own,
    /// searching for a connected graph from `k·2³²`.
    Random {
        #[serde(rename = "S")]
        s: usize,
        r: f64,
        seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

/// Choice of the augmentation scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsPolicy {
    Optimal,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSpec {
    Preset(String),
    File(PathBuf),
}

impl ModelSpec {
    pub fn load(&self, normalize: bool) -> Result<HmmModel> {
        let cfg = match self {
            Self::Preset(name) => ModelConfig::preset(name)?,
            Self::File(path) => serde_json::from_str(&read_text(path)?)?,
        };
        let model = HmmModel::new(cfg)?;
        if normalize {
            model.normalized()
        } else {
            Ok(model)
        }
    }
}

fn default_trace_sensors() -> usize {
    3
}

fn default_c() -> f64 {
    1.0
}

fn default_eps_acc() -> f64 {
    0.1
}

fn default_max_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

/// Full description of a `run` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub construction: Construction,
    pub eps: EpsPolicy,
    pub model: ModelSpec,
    #[serde(default)]
    pub normalize: bool,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Consensus rounds per measurement time.
    pub n: usize,
    pub seeds: Vec<u64>,
    /// How many randomly chosen sensors get per-round traces.
    #[serde(default = "default_trace_sensors")]
    pub trace_sensors: usize,
    /// Retain and emit per-round traces.
    #[serde(default)]
    pub keep_traces: bool,
    /// Free constant of the observation envelope.
    #[serde(default = "default_c")]
    pub c: f64,
    /// Envelope constant; calibrated when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Accuracy used for the round-count comparisons in the summary.
    #[serde(default = "default_eps_acc")]
    pub eps_acc: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// The built-in experiment: 60 sensors, radius 0.2, optimal
    /// augmentation, one random topology per seed.
    pub fn preset(n: usize, horizon: usize, seeds: Vec<u64>) -> Self {
        Self {
            topology: TopologySpec::Random {
                s: 60,
                r: 0.2,
                seed: None,
            },
            construction: Construction::MaxDegree,
            eps: EpsPolicy::Optimal,
            model: ModelSpec::Preset(crate::hmm::ASILOMAR_PRESET.into()),
            normalize: false,
            horizon,
            n,
            seeds,
            trace_sensors: default_trace_sensors(),
            keep_traces: true,
            c: default_c(),
            beta: None,
            eps_acc: default_eps_acc(),
            max_retries: default_max_retries(),
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(param("consensus rounds per step must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(param("at least one seed is required"));
        }
        if let TopologySpec::File { path } = &self.topology {
            if !path.exists() {
                return Err(param(format!(
                    "topology file {} does not exist",
                    path.display()
                )));
            }
        }
        if let ModelSpec::File(path) = &self.model {
            if !path.exists() {
                return Err(param(format!(
                    "model file {} does not exist",
                    path.display()
                )));
            }
        }
        if let EpsPolicy::Fixed(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(param(format!("augmentation must be positive, got {e}")));
            }
        }
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

/// Network and consensus operator for one run.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: GraphTopology,
    pub mixing: MixingMatrix,
    pub spectrum: SpectrumReport,
}

impl Network {
    pub fn build(
        topology: GraphTopology,
        construction: Construction,
        eps: EpsPolicy,
    ) -> Result<Self> {
        let mixing = construction.build(&topology)?;
        let eps = match eps {
            EpsPolicy::Optimal => None,
            EpsPolicy::Fixed(e) => Some(e),
        };
        let spectrum = SpectrumReport::compute(&mixing, eps)?;
        Ok(Self {
            topology,
            mixing,
            spectrum,
        })
    }
}

/// Resolves the topology for `seed` (ignored when the spec fixes one).
pub fn resolve_topology(spec: &TopologySpec, seed: u64, max_retries: u32) -> Result<GraphTopology> {
    match spec {
        TopologySpec::Random { s, r, seed: fixed } => {
            sample_connected_rgg(*s, *r, fixed.unwrap_or(seed), max_retries)
        }
        TopologySpec::File { path } => GraphTopology::from_json(&read_text(path)?),
    }
}

/// Straight-line fit of one log-domain trace after its transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceFit {
    pub t: usize,
    pub sensor: usize,
    /// Rounds discarded before fitting.
    pub transient: usize,
    /// Decay per round of the natural log of the error.
    pub slope: f64,
    pub r_squared: f64,
    /// Nonincreasing over the fitted rounds.
    pub monotone: bool,
    /// First fitted round at which the error rose, if any.
    pub first_rise: Option<usize>,
}

/// Rounds treated as transient: `⌈3τ⌉` for mixing time `τ`.
pub fn transient_rounds(tau: f64) -> usize {
    (3.0 * tau).ceil() as usize
}

/// Fits `log error` against the round index over rounds `transient+1..=n`.
///
/// `None` when fewer than three positive errors remain.
pub fn fit_trace(trace: &PosteriorTrace, transient: usize) -> Option<TraceFit> {
    let tail: Vec<(f64, f64)> = trace
        .errors
        .iter()
        .enumerate()
        .skip(transient)
        .map(|(i, &e)| ((i + 1) as f64, e))
        .collect();
    let positive: Vec<&(f64, f64)> = tail.iter().filter(|(_, e)| *e > 0.0).collect();
    if positive.len() < 3 {
        return None;
    }
    let xs: Vec<f64> = positive.iter().map(|(x, _)| *x).collect();
    let ys: Vec<f64> = positive.iter().map(|(_, e)| e.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    let first_rise = tail
        .windows(2)
        .find(|w| w[1].1 > w[0].1)
        .map(|w| w[1].0 as usize);
    Some(TraceFit {
        t: trace.t,
        sensor: trace.sensor,
        transient,
        slope: fit.slope,
        r_squared: fit.r_squared,
        monotone: first_rise.is_none(),
        first_rise,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmseRow {
    pub t: usize,
    pub sensor: usize,
    pub true_value: f64,
    pub centralized: f64,
    pub distributed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub sensor: usize,
    pub round: usize,
    pub l1_error: f64,
    /// `10 log₁₀` of the error.
    pub db10: f64,
    /// `20 log₁₀` of the error.
    pub db20: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisagreementCsvRow {
    pub t: usize,
    pub sensor: usize,
    pub posterior: f64,
    pub log_unnormalized: f64,
    pub log_norm: f64,
    pub posterior_ceiling: f64,
}

/// Minimal round counts for the stability guarantees at one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequiredN {
    pub iterate_floor: Option<usize>,
    pub unnormalized: Option<usize>,
    pub posterior: Option<usize>,
}

impl RequiredN {
    pub fn compute(constants: &StabilityConstants, eps_acc: f64, m: f64) -> Self {
        Self {
            iterate_floor: constants.required_n_iterate_floor().ok(),
            unnormalized: constants.required_n_unnormalized(eps_acc).ok(),
            posterior: constants.required_n_posterior(eps_acc, m).ok(),
        }
    }
}

/// Everything computed for one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub network: Network,
    pub traced_sensors: Vec<usize>,
    pub table: DisagreementTable,
    pub mmse: Vec<MmseRow>,
    pub traces: Vec<PosteriorTrace>,
    pub fits: Vec<Option<TraceFit>>,
    pub event: Option<EventCheck>,
    pub required_n: Option<RequiredN>,
    pub min_iterate: f64,
    pub max_statistic_norm: f64,
}

/// Per-seed line of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub traced_sensors: Vec<usize>,
    /// Sup over `t` and the traced sensors of the posterior disagreement.
    pub sup_posterior_traced: f64,
    /// Same over all sensors.
    pub sup_posterior: f64,
    pub sup_log_unnormalized: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub tau: f64,
    pub event_holds: Option<bool>,
    pub event_margin: Option<f64>,
    pub required_n: Option<RequiredN>,
    /// Whether the configured `n` meets each round count.
    pub n_meets_iterate_floor: Option<bool>,
    pub n_meets_unnormalized: Option<bool>,
    pub n_meets_posterior: Option<bool>,
    pub traces_monotone: Option<bool>,
    pub min_trace_r_squared: Option<f64>,
}

/// Summary written alongside the per-seed artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub beta: Option<f64>,
    pub calibration: Option<BetaCalibration>,
    pub event_rate: Option<f64>,
    pub floor: f64,
    pub warnings: Vec<String>,
    pub seeds: Vec<SeedSummary>,
}

impl ExperimentSummary {
    pub fn sup_posterior_traced(&self) -> Vec<f64> {
        self.seeds.iter().map(|s| s.sup_posterior_traced).collect()
    }
}

/// In-memory results of [`execute`].
#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    /// Set when every seed shares one network.
    pub shared_network: Option<Network>,
    pub runs: Vec<SeedResult>,
    pub summary: ExperimentSummary,
}

fn shares_network(spec: &TopologySpec) -> bool {
    !matches!(spec, TopologySpec::Random { seed: None, .. })
}

fn pick_sensors(seed: u64, s: usize, count: usize) -> Vec<usize> {
    let mut rng = stream(seed, Stream::SensorPick);
    let mut picked = sample(&mut rng, s, count.min(s)).into_vec();
    picked.sort_unstable();
    picked
}

fn run_seed(
    cfg: &ExperimentConfig,
    model: &HmmModel,
    shared: Option<&Network>,
    beta: Option<f64>,
    seed: u64,
) -> Result<SeedResult> {
    let network = match shared {
        Some(n) => n.clone(),
        None => Network::build(
            resolve_topology(&cfg.topology, search_seed(0, seed), cfg.max_retries)?,
            cfg.construction,
            cfg.eps,
        )?,
    };
    if network.topology.sensor_count() != model.sensor_count() {
        return Err(param(format!(
            "topology has {} sensors, model has {}",
            network.topology.sensor_count(),
            model.sensor_count()
        )));
    }
    let sim = simulate(model, cfg.horizon, seed)?;
    let central = run_centralized(model, &sim)?;
    let traced = pick_sensors(seed, model.sensor_count(), cfg.trace_sensors);
    let opts = RunOptions {
        trace_sensors: if cfg.keep_traces {
            traced.clone()
        } else {
            Vec::new()
        },
    };
    let averaging = Averaging::Admm {
        w: &network.mixing,
        eps: network.spectrum.eps,
        n: cfg.n,
    };
    let run = run_distributed(model, &sim, averaging, &opts, Some(&central))?;
    let table = l1_disagreement(&central, &run)?;

    let mut mmse = Vec::new();
    for (t, (c, per_sensor)) in central.iter().zip(&run.estimates).enumerate() {
        let centralized = mmse_estimate(c.normalized(), model.states());
        for (k, e) in per_sensor.iter().enumerate() {
            mmse.push(MmseRow {
                t,
                sensor: k,
                true_value: model.states()[sim.state_at(t)],
                centralized,
                distributed: mmse_estimate(e.normalized(), model.states()),
            });
        }
    }

    let transient = transient_rounds(network.spectrum.tau);
    let fits = run
        .posterior_traces
        .iter()
        .map(|tr| fit_trace(tr, transient))
        .collect();
    let event = beta
        .map(|b| trajectory_event_check(&sim.observations, cfg.c, b, model.total_dim()))
        .transpose()?;
    let required_n = beta.and_then(|b| {
        let inputs =
            ConstantInputs::from_model(model, &network.spectrum, cfg.c, b, cfg.horizon).ok()?;
        let k = StabilityConstants::new(inputs).ok()?;
        Some(RequiredN::compute(&k, cfg.eps_acc, 0.0))
    });
    Ok(SeedResult {
        seed,
        network,
        traced_sensors: traced,
        table,
        mmse,
        traces: run.posterior_traces,
        fits,
        event,
        required_n,
        min_iterate: run.min_iterate,
        max_statistic_norm: run.max_statistic_norm,
    })
}

fn summarize_seed(cfg: &ExperimentConfig, r: &SeedResult) -> SeedSummary {
    let meets = |req: Option<usize>| req.map(|n| cfg.n >= n);
    let fits: Vec<&TraceFit> = r.fits.iter().flatten().collect();
    let have_traces = !r.traces.is_empty();
    SeedSummary {
        seed: r.seed,
        traced_sensors: r.traced_sensors.clone(),
        sup_posterior_traced: r.table.sup_posterior_over(&r.traced_sensors),
        sup_posterior: r.table.sup_posterior(),
        sup_log_unnormalized: r.table.sup_log_unnormalized(),
        lambda2: r.network.spectrum.lambda2,
        rho: r.network.spectrum.rho,
        tau: r.network.spectrum.tau,
        event_holds: r.event.map(|e| e.holds),
        event_margin: r.event.map(|e| e.margin),
        required_n: r.required_n,
        n_meets_iterate_floor: r.required_n.and_then(|q| meets(q.iterate_floor)),
        n_meets_unnormalized: r.required_n.and_then(|q| meets(q.unnormalized)),
        n_meets_posterior: r.required_n.and_then(|q| meets(q.posterior)),
        traces_monotone: have_traces.then(|| r.fits.iter().all(|f| f.is_some_and(|f| f.monotone))),
        min_trace_r_squared: fits.iter().map(|f| f.r_squared).reduce(f64::min),
    }
}

/// Runs every seed of `cfg` in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    let model = cfg.model.load(cfg.normalize)?;
    let shared = if shares_network(&cfg.topology) {
        Some(Network::build(
            resolve_topology(&cfg.topology, 0, cfg.max_retries)?,
            cfg.construction,
            cfg.eps,
        )?)
    } else {
        None
    };
    let calibration = match cfg.beta {
        Some(_) => None,
        None => calibrate_beta(&model, cfg.c, cfg.horizon, CALIBRATION_TRIALS, 0).ok(),
    };
    let beta = cfg.beta.or(calibration.as_ref().map(|c| c.beta));

    let runs: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, &model, shared.as_ref(), beta, seed))
        .collect::<Result<_>>()?;

    let seeds: Vec<SeedSummary> = runs.iter().map(|r| summarize_seed(cfg, r)).collect();
    let event_rate = beta.map(|_| {
        seeds.iter().filter(|s| s.event_holds == Some(true)).count() as f64 / seeds.len() as f64
    });
    let summary = ExperimentSummary {
        n: cfg.n,
        horizon: cfg.horizon,
        beta,
        calibration,
        event_rate,
        floor: probability_floor(cfg.c, model.total_dim(), cfg.horizon),
        warnings: model.assumption_warnings(),
        seeds,
    };
    Ok(ExperimentResults {
        config: cfg.clone(),
        shared_network: shared,
        runs,
        summary,
    })
}

fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

fn write_network(dir: &Path, net: &Network) -> Result<()> {
    write_text(&dir.join("topology.json"), &net.topology.to_json()?)?;
    write_text(
        &dir.join("spectrum.json"),
        &serde_json::to_string_pretty(&net.spectrum)?,
    )
}

/// Writes configuration, networks, per-seed tables and the summary.
pub fn write_artifacts(results: &ExperimentResults, root: &Path) -> Result<()> {
    create_dir(root)?;
    write_text(
        &root.join("config.json"),
        &serde_json::to_string_pretty(&results.config)?,
    )?;
    if let Some(net) = &results.shared_network {
        write_network(root, net)?;
    }
    for r in &results.runs {
        let dir = seed_dir(root, r.seed);
        create_dir(&dir)?;
        if results.shared_network.is_none() {
            write_network(&dir, &r.network)?;
        }
        let rows: Vec<DisagreementCsvRow> = r
            .table
            .rows
            .iter()
            .map(|d| DisagreementCsvRow {
                t: d.t,
                sensor: d.sensor,
                posterior: d.posterior,
                log_unnormalized: d.log_unnormalized,
                log_norm: d.log_norm,
                posterior_ceiling: d.posterior_ceiling(),
            })
            .collect();
        write_csv(&dir.join("disagreement.csv"), &rows)?;
        write_csv(&dir.join("mmse.csv"), &r.mmse)?;
        if !r.traces.is_empty() {
            let mut rows = Vec::new();
            for tr in &r.traces {
                for (i, &e) in tr.errors.iter().enumerate() {
                    let b = e.log10();
                    rows.push(TraceRow {
                        t: tr.t,
                        sensor: tr.sensor,
                        round: i + 1,
                        l1_error: e,
                        db10: 10.0 * b,
                        db20: 20.0 * b,
                    });
                }
            }
            write_csv(&dir.join("consensus_traces.csv"), &rows)?;
            let fits: Vec<&TraceFit> = r.fits.iter().flatten().collect();
            write_text(
                &dir.join("trace_fits.json"),
                &serde_json::to_string_pretty(&fits)?,
            )?;
        }
    }
    write_text(
        &root.join("summary.json"),
        &serde_json::to_string_pretty(&results.summary)?,
    )
}

/// Executes `cfg` and writes its artifacts under `root`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentSummary> {
    let results = execute(cfg)?;
    write_artifacts(&results, root)?;
    Ok(results.summary)
}

/// Reads a summary and checks each seed's suprema against its table.
pub fn load_summary(root: &Path) -> Result<ExperimentSummary> {
    let summary: ExperimentSummary = serde_json::from_str(&read_text(&root.join("summary.json"))?)?;
    for s in &summary.seeds {
        let rows: Vec<DisagreementCsvRow> =
            read_csv(&seed_dir(root, s.seed).join("disagreement.csv"))?;
        let all = rows.iter().map(|r| r.posterior).fold(0.0, f64::max);
        let traced = rows
            .iter()
            .filter(|r| s.traced_sensors.contains(&r.sensor))
            .map(|r| r.posterior)
            .fold(0.0, f64::max);
        if all != s.sup_posterior || traced != s.sup_posterior_traced {
            return Err(Error::Validation(format!(
                "seed {}: summary suprema ({}, {}) disagree with the table ({all}, {traced})",
                s.seed, s.sup_posterior, s.sup_posterior_traced
            )));
        }
    }
    Ok(summary)
}

/// One graph of a mixing-time sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "S")]
    pub s: usize,
    pub trial: usize,
    /// Seed of the connected graph actually used.
    pub seed: u64,
    pub lambda2: f64,
    pub rho_star: f64,
    pub tau: f64,
}

/// Seed from which draw `index` starts its connectivity search. Draws are
/// spaced far enough apart that their searches never overlap, so
/// neighbouring indices never land on the same graph.
pub fn search_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index << 32)
}

/// Optimal consensus constants over random connected graphs of each size.
pub fn sweep_mixing(
    sizes: &[usize],
    r: f64,
    trials: usize,
    construction: Construction,
    base_seed: u64,
    max_retries: u32,
) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| (0..trials).map(move |t| (s, t)))
        .collect();
    jobs.par_iter()
        .map(|&(s, trial)| {
            let g = sample_connected_rgg(s, r, search_seed(base_seed, trial as u64), max_retries)?;
            let w = construction.build(&g)?;
            let sp = SpectrumReport::compute(&w, None)?;
            Ok(SweepRow {
                s,
                trial,
                seed: g.seed().unwrap_or_default(),
                lambda2: sp.lambda2,
                rho_star: sp.rho_star,
                tau: sp.tau,
            })
        })
        .collect()
}

/// Median mixing time per size, in the order sizes first appear.
pub fn median_tau_by_size(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sizes.contains(&r.s) {
            sizes.push(r.s);
        }
    }
    sizes
        .into_iter()
        .map(|s| {
            let taus: Vec<f64> = rows.iter().filter(|r| r.s == s).map(|r| r.tau).collect();
            (s, median(&taus))
        })
        .collect()
}

/// Writes sweep rows as CSV.
pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| csv_error(Path::new("<sweep>"), e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<sweep>".into(),
        source,
    })
}

/// One point of the rate curve `ρ(ε)` at a given `λ₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub lambda2: f64,
    pub eps: f64,
    pub rho: f64,
}

/// `λ₂` values drawn by default next to a network's own.
pub const REFERENCE_LAMBDA2: [f64; 7] = [-0.5, 0.0, 0.25, 0.5, 0.75, 0.9, 0.99];

/// `ρ(ε, λ₂)` for every `λ₂` in `lambdas` on `points` log-spaced `ε` in
/// `[1e-2, 1e2]`, with each curve's optimum appended.
pub fn rate_curves(lambdas: &[f64], points: usize) -> Result<Vec<RateSample>> {
    if points < 2 {
        return Err(param("a rate curve needs at least two points"));
    }
    let mut out = Vec::with_capacity(lambdas.len() * (points + 1));
    for &lambda2 in lambdas {
        let star = crate::mixing::eps_star(lambda2)?;
        let grid = (0..points).map(|i| 10f64.powf(-2.0 + 4.0 * i as f64 / (points - 1) as f64));
        let mut eps: Vec<f64> = grid.chain(std::iter::once(star)).collect();
        eps.sort_by(f64::total_cmp);
        out.extend(eps.into_iter().map(|e| RateSample {
            lambda2,
            eps: e,
            rho: crate::mixing::slem(e, lambda2),
        }));
    }
    Ok(out)
}

pub fn write_rate_csv<W: std::io::Write>(out: W, rows: &[RateSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| csv_error(Path::new("<rates>"), e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<rates>".into(),
        source,
    })
}

/// Round counts for every guarantee, with the constants they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequiredNReport {
    pub constants: StabilityConstants,
    pub calibration: Option<BetaCalibration>,
    pub eps_acc: f64,
    pub m: f64,
    pub iterate_floor: usize,
    pub unnormalized: usize,
    pub posterior: Option<usize>,
    /// Why the posterior count is missing, if it is.
    pub posterior_note: Option<String>,
    pub warnings: Vec<String>,
}

/// Computes [`RequiredNReport`]; `beta` is calibrated when absent.
pub fn required_n_report(
    model: &HmmModel,
    spectrum: &SpectrumReport,
    c: f64,
    beta: Option<f64>,
    horizon: usize,
    eps_acc: f64,
    m: f64,
) -> Result<RequiredNReport> {
    let calibration = match beta {
        Some(_) => None,
        None => Some(calibrate_beta(model, c, horizon, CALIBRATION_TRIALS, 0)?),
    };
    let beta = beta
        .or(calibration.as_ref().map(|c| c.beta))
        .expect("set above");
    let constants = StabilityConstants::new(ConstantInputs::from_model(
        model, spectrum, c, beta, horizon,
    )?)?;
    let (posterior, posterior_note) = match constants.required_n_posterior(eps_acc, m) {
        Ok(n) => (Some(n), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(RequiredNReport {
        iterate_floor: constants.required_n_iterate_floor()?,
        unnormalized: constants.required_n_unnormalized(eps_acc)?,
        constants,
        calibration,
        eps_acc,
        m,
        posterior,
        posterior_note,
        warnings: model.assumption_warnings(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seeds: Vec<u64>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset(30, 4, seeds);
        cfg.topology = TopologySpec::Random {
            s: 6,
            r: 0.6,
            seed: None,
        };
        cfg.model = ModelSpec::Preset(crate::hmm::COMPACT_PRESET.into());
        cfg
    }

    #[test]
    fn rate_curves_include_the_optimum() {
        let rows = rate_curves(&[0.0, 0.5], 50).unwrap();
        assert_eq!(rows.len(), 102);
        for l in [0.0, 0.5] {
            let curve: Vec<_> = rows.iter().filter(|r| r.lambda2 == l).collect();
            let best = curve.iter().map(|r| r.rho).fold(f64::INFINITY, f64::min);
            assert!((best - crate::mixing::rho_star(l).unwrap()).abs() < 1e-12);
            assert!(curve.windows(2).all(|w| w[0].eps <= w[1].eps));
        }
        assert!(rate_curves(&[0.5], 1).is_err());
        assert!(rate_curves(&[1.0], 10).is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small_config(vec![1, 2]);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(
            serde_json::from_str::<ExperimentConfig>(&text).unwrap(),
            cfg
        );
    }

    #[test]
    fn fit_detects_rise_and_line() {
        let line = PosteriorTrace {
            t: 0,
            sensor: 0,
            errors: (1..=50).map(|i| (-0.3 * i as f64).exp()).collect(),
        };
        let f = fit_trace(&line, 5).unwrap();
        assert!(f.monotone && f.r_squared > 1.0 - 1e-12);
        assert!((f.slope + 0.3).abs() < 1e-9);
        let mut bumpy = line.clone();
        bumpy.errors[30] = 1.0;
        let f = fit_trace(&bumpy, 5).unwrap();
        assert!(!f.monotone);
        assert_eq!(f.first_rise, Some(31));
        assert!(fit_trace(&line, 49).is_none());
    }

    #[test]
    fn compact_preset_size_mismatch_is_reported() {
        // the compact preset has 8 sensors
        assert!(matches!(
            execute(&small_config(vec![0])),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn artifacts_are_deterministic_and_cross_checked() {
        let mut cfg = small_config(vec![3, 4]);
        cfg.topology = TopologySpec::Random {
            s: 8,
            r: 0.6,
            seed: None,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, a.path()).unwrap();
        run_experiment(&cfg, b.path()).unwrap();
        for rel in [
            "summary.json",
            "config.json",
            "seed-3/disagreement.csv",
            "seed-4/consensus_traces.csv",
            "seed-4/mmse.csv",
        ] {
            let x = fs::read(a.path().join(rel)).unwrap();
            let y = fs::read(b.path().join(rel)).unwrap();
            assert_eq!(x, y, "{rel}");
        }
        let s = load_summary(a.path()).unwrap();
        assert_eq!(s.seeds.len(), 2);
        assert!(s.beta.is_some());

        // tampering with a table is caught
        let p = a.path().join("seed-3/disagreement.csv");
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[5].split(',').map(String::from).collect();
        cells[2] = "1.5".into();
        lines[5] = cells.join(",");
        fs::write(&p, lines.join("\n") + "\n").unwrap();
        assert!(matches!(load_summary(a.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn sweep_rows_cover_the_grid() {
        let rows = sweep_mixing(&[5, 6], 0.8, 3, Construction::MaxDegree, 0, 100).unwrap();
        assert_eq!(rows.len(), 6);
        let med = median_tau_by_size(&rows);
        assert_eq!(med.iter().map(|m| m.0).collect::<Vec<_>>(), vec![5, 6]);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("S,trial,seed,lambda2,rho_star,tau\n"));
    }
}
