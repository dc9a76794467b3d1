//! Stabilizing controllers for discrete-time nonlinear systems in
//! state-dependent form `x⁺ = A(x)x + B(x)u`, synthesized from a known model
//! or directly from noisy experiment data by solving vertex LMIs.
//!
//! The crate is organized bottom-up:
//!
//! - [`expr`]: scalar expressions of the state with interval bounds.
//! - [`model`]: state-dependent models, basis libraries and vertex sets.
//! - [`data`]: experiment data matrices and the data-consistency set.
//! - [`lmi`]: block LMI assembly and the conic solver backend.
//! - [`synth`]: controller synthesis and region-of-attraction radii.
//! - [`analysis`]: disturbance robustness and sublevel-set ROA estimates.
//! - [`sim`]: closed-loop simulation and experiment generation.
//! - [`fixtures`]: built-in benchmark systems.

// Links the system BLAS/LAPACK used by the SDP backend.
use openblas_src as _;

pub mod analysis;
pub mod data;
mod error;
pub mod expr;
pub mod fixtures;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod sim;
pub mod synth;

pub use error::{Error, Result};

/// Version tag written into every persisted document.
pub const FORMAT_VERSION: u32 = 1;
