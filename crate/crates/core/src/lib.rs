//! Autoencoder risks, gradient-norm penalties and principal-curve diagnostics.
//!
//! The crate is built around a small differentiation engine ([`diffmath`])
//! that supports the second-order derivatives the penalties need: the
//! orthogonal contractive penalty is itself a vector-Jacobian product, and
//! training differentiates through it.

pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod diffmath;
pub mod gnorm;
pub mod network;
pub mod risks;
pub mod rng;
pub mod table;
pub mod train;

pub use data::{Dataset, DatasetMeta, FixtureKind, Generator, PolarGrid};
pub use diffmath::{Matrix, Tape, Var};
pub use network::{parse_arch, Activation, ArchSpec, Autoencoder, CircleProjection, LatentRule, Model, Net};
pub use risks::{BaseRisk, BatchStats, Penalty, PenaltyKind, RiskSpec, Schedule};
pub use train::{Optimizer, RunRecord, TrainConfig};
