mod ranges;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhmm_core::experiment::{
    rate_curves, required_n_report, resolve_topology, run_experiment, sweep_mixing, write_rate_csv,
    write_sweep_csv, EpsPolicy, ExperimentConfig, ModelSpec, Network, TopologySpec,
    REFERENCE_LAMBDA2,
};
use dhmm_core::graph::{sample_connected_rgg, sample_rgg, DEFAULT_MAX_RETRIES};
use dhmm_core::hmm::{ASILOMAR_PRESET, COMPACT_PRESET};
use dhmm_core::mixing::Construction;
use dhmm_core::stability::{
    calibrate_beta, verify_bounds, ConstantInputs, StabilityConstants, VerifyConfig,
};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(
    name = "dhmm",
    version,
    about = "Distributed HMM filtering over sensor networks with ADMM consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random geometric graph and print it as JSON.
    GenGraph(GenGraphArgs),
    /// Spectrum of the consensus operator for one network.
    AnalyzeSpectrum(SpectrumArgs),
    /// Run the distributed filter over seeds and write artifacts.
    Run(RunArgs),
    /// Check every stability guarantee by Monte Carlo.
    VerifyBounds(VerifyArgs),
    /// Optimal consensus constants over random graphs of several sizes.
    SweepMixing(SweepArgs),
    /// Minimal consensus rounds for each stability guarantee.
    RequiredN(RequiredArgs),
}

#[derive(Args)]
struct GenGraphArgs {
    #[arg(long = "S")]
    s: usize,
    #[arg(long)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the first draw even if it is disconnected.
    #[arg(long)]
    allow_disconnected: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct TopologyArgs {
    /// Sensor count (defaults to the model preset's).
    #[arg(long = "S")]
    s: Option<usize>,
    /// Connectivity radius (defaults to the model preset's).
    #[arg(long)]
    r: Option<f64>,
    /// Fix the topology seed. Without it, `run` draws one graph per run seed
    /// and the single-network commands use seed 0.
    #[arg(long = "seed")]
    topology_seed: Option<u64>,
    /// Read the topology from a JSON file instead.
    #[arg(long, conflicts_with_all = ["s", "r", "topology_seed"])]
    topology: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    #[arg(long, default_value = "max-degree")]
    construction: Construction,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Built-in model (asilomar-v or compact-3).
    #[arg(long, default_value = ASILOMAR_PRESET, conflicts_with = "model")]
    preset: String,
    /// Model description as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Rescale observations so every covariance eigenvalue is at least e.
    #[arg(long)]
    normalize: bool,
}

impl ModelArgs {
    fn spec(&self) -> ModelSpec {
        match &self.model {
            Some(p) => ModelSpec::File(p.clone()),
            None => ModelSpec::Preset(self.preset.clone()),
        }
    }

    /// Network size and radius the preset is meant for.
    fn default_network(&self) -> (usize, f64) {
        match (self.model.as_ref(), self.preset.as_str()) {
            (None, COMPACT_PRESET) => (8, 0.5),
            _ => (60, 0.2),
        }
    }
}

fn topology_spec(t: &TopologyArgs, m: &ModelArgs) -> TopologySpec {
    match &t.topology {
        Some(path) => TopologySpec::File { path: path.clone() },
        None => {
            let (s, r) = m.default_network();
            TopologySpec::Random {
                s: t.s.unwrap_or(s),
                r: t.r.unwrap_or(r),
                seed: t.topology_seed,
            }
        }
    }
}

fn parse_eps(text: &str) -> Result<EpsPolicy, String> {
    if text == "optimal" {
        return Ok(EpsPolicy::Optimal);
    }
    text.parse::<f64>()
        .map(EpsPolicy::Fixed)
        .map_err(|_| format!("{text:?} is neither \"optimal\" nor a number"))
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    ranges::parse_list::<u64>(text)
}

fn parse_sizes(text: &str) -> Result<Vec<u32>, String> {
    ranges::parse_list::<u32>(text)
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long = "S")]
    s: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, conflicts_with_all = ["s", "r"])]
    topology: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    #[arg(long, default_value = "max-degree")]
    construction: Construction,
    /// Augmentation scalar: "optimal" or a positive number.
    #[arg(long, default_value = "optimal", value_parser = parse_eps)]
    eps: EpsPolicy,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write `lambda2, eps, rho` samples of the rate curve for this
    /// network and reference values of lambda2, as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Full experiment configuration as JSON; flags are ignored when given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long, default_value = "optimal", value_parser = parse_eps)]
    eps: EpsPolicy,
    /// Consensus rounds per measurement time.
    #[arg(long, default_value_t = 250)]
    n: usize,
    #[arg(long = "T", default_value_t = 20)]
    horizon: usize,
    /// Seeds, e.g. 0..9 or 1,5,7.
    #[arg(long, default_value = "0", value_parser = parse_seeds)]
    seeds: std::vec::Vec<u64>,
    /// Randomly chosen sensors whose per-round traces are kept.
    #[arg(long, default_value_t = 3)]
    trace_sensors: usize,
    /// Do not keep per-round traces.
    #[arg(long)]
    no_traces: bool,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Envelope constant; calibrated when absent.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    eps_acc: f64,
    /// Output directory (default: $DHMM_OUT/run).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root for default output directories.
    #[arg(long, env = "DHMM_OUT", default_value = "dhmm-out")]
    out_root: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long = "T", default_value_t = 10)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    eps_acc: f64,
    /// Extra decay exponents, comma-separated.
    #[arg(long, default_value = "0,2", value_parser = ranges::parse_reals)]
    m: std::vec::Vec<f64>,
    #[arg(long, default_value = "0..199", value_parser = parse_seeds)]
    seeds: std::vec::Vec<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sensor counts, e.g. 10..60..10.
    #[arg(long = "S", value_parser = parse_sizes)]
    s: std::vec::Vec<u32>,
    #[arg(long, default_value_t = 0.2)]
    r: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value = "max-degree")]
    construction: Construction,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = u32::MAX)]
    max_retries: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RequiredArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long = "T", default_value_t = 20)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    eps_acc: f64,
    #[arg(long, default_value_t = 0.0)]
    m: f64,
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn gen_graph(a: GenGraphArgs) -> CliResult {
    let g = if a.allow_disconnected {
        sample_rgg(a.s, a.r, a.seed)?
    } else {
        sample_connected_rgg(a.s, a.r, a.seed, a.max_retries)?
    };
    emit(a.out.as_deref(), &g.to_json()?)
}

fn analyze_spectrum(a: SpectrumArgs) -> CliResult {
    let spec = match a.topology {
        Some(path) => TopologySpec::File { path },
        None => TopologySpec::Random {
            s: a.s.unwrap_or(60),
            r: a.r.unwrap_or(0.2),
            seed: Some(a.seed),
        },
    };
    let net = Network::build(
        resolve_topology(&spec, a.seed, a.max_retries)?,
        a.construction,
        a.eps,
    )?;
    if let Some(path) = &a.curve {
        let mut lambdas = vec![net.spectrum.lambda2];
        lambdas.extend(REFERENCE_LAMBDA2);
        write_rate_csv(fs::File::create(path)?, &rate_curves(&lambdas, 200)?)?;
    }
    emit(
        a.out.as_deref(),
        &serde_json::to_string_pretty(&net.spectrum)?,
    )
}

fn run(a: RunArgs) -> CliResult {
    let cfg = match &a.config {
        Some(path) => serde_json::from_str::<ExperimentConfig>(&fs::read_to_string(path)?)?,
        None => ExperimentConfig {
            topology: topology_spec(&a.topology, &a.model),
            construction: a.topology.construction,
            eps: a.eps,
            model: a.model.spec(),
            normalize: a.model.normalize,
            horizon: a.horizon,
            n: a.n,
            seeds: a.seeds.clone(),
            trace_sensors: a.trace_sensors,
            keep_traces: !a.no_traces,
            c: a.c,
            beta: a.beta,
            eps_acc: a.eps_acc,
            max_retries: a.topology.max_retries,
            out_dir: a.out.clone(),
        },
    };
    let root = cfg
        .out_dir
        .clone()
        .or(a.out)
        .unwrap_or_else(|| a.out_root.join("run"));
    let summary = run_experiment(&cfg, &root)?;
    warn_all(&summary.warnings);
    for s in &summary.seeds {
        println!(
            "seed {}: sup posterior disagreement {:.3e} (traced sensors {:?}), tau {:.2}",
            s.seed, s.sup_posterior_traced, s.traced_sensors, s.tau
        );
    }
    println!("artifacts written to {}", root.display());
    Ok(())
}

fn load_network(t: &TopologyArgs, m: &ModelArgs) -> CliResult<Network> {
    let mut spec = topology_spec(t, m);
    if let TopologySpec::Random { seed, .. } = &mut spec {
        seed.get_or_insert(0);
    }
    Ok(Network::build(
        resolve_topology(&spec, 0, t.max_retries)?,
        t.construction,
        EpsPolicy::Optimal,
    )?)
}

fn verify(a: VerifyArgs) -> CliResult {
    let model = a.model.spec().load(a.model.normalize)?;
    warn_all(&model.assumption_warnings());
    let net = load_network(&a.topology, &a.model)?;
    let beta = match a.beta {
        Some(b) => b,
        None => {
            calibrate_beta(
                &model,
                a.c,
                a.horizon,
                dhmm_core::experiment::CALIBRATION_TRIALS,
                0,
            )?
            .beta
        }
    };
    let constants = StabilityConstants::new(ConstantInputs::from_model(
        &model,
        &net.spectrum,
        a.c,
        beta,
        a.horizon,
    )?)?;
    let cfg = VerifyConfig {
        seeds: a.seeds,
        eps_acc: a.eps_acc,
        m_values: a.m,
    };
    let report = verify_bounds(&model, &net.mixing, &constants, &cfg)?;
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn sweep(a: SweepArgs) -> CliResult {
    let sizes: Vec<usize> = a.s.iter().map(|&s| s as usize).collect();
    let rows = sweep_mixing(&sizes, a.r, a.trials, a.construction, a.seed, a.max_retries)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows)?;
    emit(a.out.as_deref(), &String::from_utf8(buf)?)
}

fn required(a: RequiredArgs) -> CliResult {
    let model = a.model.spec().load(a.model.normalize)?;
    let net = load_network(&a.topology, &a.model)?;
    let report = required_n_report(
        &model,
        &net.spectrum,
        a.c,
        a.beta,
        a.horizon,
        a.eps_acc,
        a.m,
    )?;
    warn_all(&report.warnings);
    emit(None, &serde_json::to_string_pretty(&report)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenGraph(a) => gen_graph(a),
        Command::AnalyzeSpectrum(a) => analyze_spectrum(a),
        Command::Run(a) => run(a),
        Command::VerifyBounds(a) => verify(a),
        Command::SweepMixing(a) => sweep(a),
        Command::RequiredN(a) => required(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
