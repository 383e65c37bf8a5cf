// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod gelfand;
pub mod graph;
pub mod io;
pub mod ito;
pub mod noise;
pub mod solver;
pub mod stats;
pub mod tridiag;

pub use error::{Error, Result};
pub use gelfand::{h_inner, CoercivityReport, EllipticOperator, GridFunction, Mesh};
pub use graph::{MonotoneGraph, Prox};
pub use noise::{Diffusion, DiffusionCoefficient, DiffusionKind, TruncatedDiffusion, WienerPath};
pub use solver::{
    EnergyTerms, IntegrationSummary, Model, Regularization, SolutionPath, Solver, SolverConfig, StepOutcome,
    TauRecord, TruncationPolicy,
};
