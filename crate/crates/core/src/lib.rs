//! Numerical lab for cross-diffusion systems `u_t = Δ(P(u)) + f(u)` of
//! Shigesada–Kawasaki–Teramoto type on boxes with Dirichlet boundary.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod config;
pub mod dual;
pub mod error;
pub mod exponents;
pub mod forward;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod model;
pub mod report;
pub mod stencil;
pub mod structure;
pub mod suite;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Domain, Field, Trajectory};
pub use model::{CrossDiffusionModel, CustomModel, LinearModel, SktModel, SktParams};
pub use report::{CheckEntry, CheckReport, VerificationReport};
