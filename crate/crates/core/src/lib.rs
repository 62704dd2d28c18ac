//! Reconstruction of dynamic sparse measures whose atoms move along curves of
//! bounded variation, from time-sampled Gaussian sensor data.
//!
//! The solver is a fully corrective generalized conditional gradient method:
//! each outer iteration inserts the curve that maximizes a dual certificate
//! and then re-optimizes all weights jointly.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coefficients;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod insertion;
pub mod objective;
pub mod plot;
pub mod solver;
pub mod validation;

pub use domain::*;
pub use error::{Error, Result};
pub use forward::{forward_atom, forward_interval_measure, forward_measure, GroundTruth, IntervalMeasureSpec};
pub use objective::{a0, certificate_value, discrete_variation, fidelity, objective_value};
pub use solver::{certify, fcgcg_solve, CertificateReport, ReconstructionResult, StopReason};
pub use experiments::{run_experiment, simulate, DataFile, ExperimentName, ExperimentSpec, Setup};
