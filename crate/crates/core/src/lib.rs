//! Solvers and diagnostics for one-dimensional first-order mean field games with local
//! coupling `f(m) = m^theta` or `f(m) = log m`.
//!
//! Everything is generic over the scalar type (`f32` or `f64`); the `*64` aliases below fix
//! `f64`, which is what the command-line tool uses.

// `!(x > 0.0)` style guards are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the stencil notation and often touch several arrays at once.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod diagnostics;
pub mod eulerian;
pub mod interp;
pub mod lagrangian;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod scalar;
pub mod selfsim;
pub mod variational;

pub use error::{MfgError, Result};
pub use model::{
    CouplingKind, CouplingLaw, FlowField, FreeBoundaryCurves, MarginalProfile, ProblemKind,
    ScalarField, SolutionBundle, SpaceTimeGrid, Topology,
};
pub use scalar::Real;
pub use eulerian::{EulerTerminal, EulerianProblem};
pub use selfsim::SelfSimilarModel;
pub use variational::CongestionProgram;

pub type CouplingLaw64 = CouplingLaw<f64>;
pub type SpaceTimeGrid64 = SpaceTimeGrid<f64>;
pub type MarginalProfile64 = MarginalProfile<f64>;
pub type ScalarField64 = ScalarField<f64>;
pub type FlowField64 = FlowField<f64>;
pub type FreeBoundaryCurves64 = FreeBoundaryCurves<f64>;
pub type SelfSimilarModel64 = selfsim::SelfSimilarModel<f64>;
pub type EulerianProblem64 = eulerian::EulerianProblem<f64>;
pub type CongestionProgram64 = variational::CongestionProgram<f64>;

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
