//! Distributed filtering of a Gaussian-finite hidden Markov model over a
//! sensor network. Each sensor runs the forward recursion on its own and
//! obtains the global likelihood through ADMM average consensus with its
//! graph neighbours.
//!
//! Modules follow the data flow: [`graph`] samples the network, [`mixing`]
//! builds the mixing matrix and the consensus spectrum, [`consensus`] runs
//! the averaging iterations, [`hmm`] holds the model and the centralized
//! filter, [`dfilter`] the per-sensor filters, and [`stability`] the
//! finite-horizon guarantees on the number of rounds. [`experiment`] ties
//! them into reproducible runs.

pub mod consensus;
pub mod dfilter;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod hmm;
pub mod mixing;
pub mod numeric;
pub mod rng;
pub mod stability;

pub use consensus::ConsensusInstance;
pub use dfilter::{Averaging, DistributedRun};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentSummary};
pub use graph::GraphTopology;
pub use hmm::{HmmModel, ModelConfig, ScaledVector, SimulationRun};
pub use mixing::{Construction, MixingMatrix, SpectrumReport};
pub use stability::{BoundsReport, StabilityConstants};
