//! Simulation and verification toolkit for the subcritical contact branching
//! random walk on `Z^d` with immigration.
//!
//! Particles jump with rate `κ` according to a symmetric law `a`, die with
//! rate `μ`, and split into `l ≥ 2` particles with rate `β_l`; on splitting
//! the parent stays put and the `l - 1` newcomers are displaced by
//! independent draws from a symmetric law `b`. New particles immigrate at
//! every site as independent Poisson streams of rate `γ`.
//!
//! Modules:
//! - [`kernels`]: step laws, Fourier symbols, transition probabilities
//! - [`model`]: parameter validation and the gap `Δ`
//! - [`simulator`]: exact event-driven simulation and ensembles on a torus
//! - [`hierarchy`]: factorial-moment equations of one subpopulation
//! - [`cumulants`]: moment/cumulant transforms and population cumulants
//! - [`bounds`]: the constants `B`, `D_k` and factorial-moment bounds
//! - [`oracle`]: brute-force master equation on tiny tori
//! - [`verify`]: the acceptance checks, runnable from tests and the CLI

pub mod bounds;
pub mod cumulants;
pub mod hierarchy;
pub mod kernels;
pub mod model;
pub mod oracle;
pub mod simulator;
pub mod stats;
pub mod torus;
pub mod verify;

pub use model::{validate, Model, ModelError, ModelParams};
pub use torus::Torus;

/// Version of this library, as recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
