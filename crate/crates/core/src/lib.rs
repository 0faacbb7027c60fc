//! Learned communication scheduling for cooperative multi-agent
//! reinforcement learning.
//!
//! Agents share a medium on which only `k` of them may broadcast an
//! `l`-unit message each step. Every agent learns a message encoder, a
//! scheduling-weight generator and an action selector; a weight-based
//! scheduler ([`wsa`]) turns the weights into a schedule, and a centralized
//! critic ([`critic`]) drives training ([`trainer`]). The [`csma`] module
//! realizes the schedulers as distributed medium-access protocols.
//!
//! The numeric core is generic over [`Scalar`]; the aliases below fix the
//! `f64` instantiation the trainer uses.

pub mod actor;
pub mod baselines;
pub mod critic;
pub mod csma;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod scalar;
pub mod trainer;
pub mod wsa;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Random stream used by every stochastic component.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub type ParameterSet = nn::ParameterSet<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Mlp = nn::Mlp<f64>;
pub type AgentActor = actor::AgentActor<f64>;
pub type CriticParams = critic::CriticParams<f64>;
