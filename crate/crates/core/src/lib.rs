//! Distributed sparse channel estimation for massive MIMO-OFDM.
//!
//! Each antenna of a rectangular grid observes its sparse channel impulse
//! response through `K` pilot carriers and runs a greedy Bayesian matching
//! pursuit that needs no amplitude prior. Neighboring antennas then share
//! either per-tap marginal activity probabilities or integer tap scores for
//! `D` synchronous rounds and re-estimate with the shared beliefs as priors.
//! A data-aided pass adds data carriers that are reliable at every antenna
//! of a neighborhood and decoded identically by all of them.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, which is what the experiment harness
//! uses.

pub mod channel_model;
pub mod coordination;
pub mod data_aided;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod rs1;
pub mod sabmp;
pub mod scalar;
pub mod signal_model;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Complex64 = scalar::Cplx<f64>;
pub type Matrix = linalg::CMat<f64>;
pub type Estimate = sabmp::SparseEstimate<f64>;
pub type Prior = sabmp::BernoulliPrior<f64>;
pub type Covariance = rs1::ErrorCovariance<f64>;
pub type Marginals = rs1::MarginalSet<f64>;
pub type Channels = channel_model::ChannelRealization<f64>;
pub type Alphabet = signal_model::QamAlphabet<f64>;
pub type Frame = signal_model::OfdmFrame<f64>;
pub type Beliefs = coordination::BeliefState<f64>;
pub type Observation = coordination::PilotObservation<f64>;
pub type AntennaResult = coordination::AntennaEstimate<f64>;
