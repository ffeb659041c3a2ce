//! Estimation entropy laboratory.
//!
//! Counts separated and spanning sets under the α-weighted Bowen metric,
//! computes Lyapunov spectra, measures Bowen-ball volume decay, runs a
//! finite-rate state estimation coder and builds the refining simplicial
//! partitions used in the volume lemma.
//!
//! Units follow the time semantics of the system: discrete-time maps report
//! rates in bits per step (base-2 logarithms, weights `2^{αk}`), sampled flows
//! report nats per unit time (natural logarithms, weights `e^{αt}`).

// Negated comparisons reject NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ballvolume;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod linalg;
pub mod lyapunov;
pub mod partitions;
pub mod seed;
pub mod systems;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use systems::{
    Dynamics, MetricSpec, OdeRhs, StateSpace, SystemConfig, SystemDefinition, TimeSemantics,
    Units,
};
