//! Routed Bell test randomness beacon: photonic model, NPA certification,
//! spot-checking protocol, transport and Toeplitz extraction.
//!
//! Numerical modules are generic over [`scalar::Scalar`]; the aliases below
//! fix the scalar to `f64`.

pub mod behavior;
pub mod certifier;
pub mod config;
pub mod extractor;
pub mod linalg;
pub mod npa;
pub mod photonic_sim;
pub mod protocol;
pub mod scalar;
pub mod sdp;
pub mod transport;

pub type Matrix = linalg::Matrix<f64>;
pub type Behavior = behavior::Behavior<f64>;
pub type CoarseStats = behavior::CoarseStats<f64>;
pub type OpticalModel = photonic_sim::OpticalModel<f64>;
pub type SdpProblem = sdp::SdpProblem<f64>;
pub type SdpSolution = sdp::SdpSolution<f64>;
pub type SolverOptions = sdp::SolverOptions<f64>;
pub type Polynomial = npa::Polynomial<f64>;
pub type MomentSdp = npa::MomentSdp<f64>;
pub type NpaSolution = npa::NpaSolution<f64>;
pub type GuessingProgramSpec = certifier::GuessingProgramSpec<f64>;
pub type GuessingBound = certifier::GuessingBound<f64>;
pub type ScoreModel = certifier::ScoreModel<f64>;
pub type ScoreDistribution = certifier::ScoreDistribution<f64>;
pub type MinTradeoff = certifier::MinTradeoff<f64>;
pub type AcceptedSet = certifier::AcceptedSet<f64>;
pub type ScanRow = certifier::ScanRow<f64>;
