//! Forward, linearized and adjoint solvers for boundary optimal control of a
//! Caginalp-type phase-field system whose temperature obeys a dynamic
//! boundary condition, plus a projected-gradient optimizer and the
//! verification drivers built on top of them.
//!
//! The state `(theta, phi)` solves
//!
//! ```text
//!     d_t theta - Laplace theta + lambda(phi) d_t phi = 0
//!     d_t phi - sigma Laplace phi + beta(phi) + pi(phi) = theta lambda(phi)
//!     d_n theta + tau d_t theta_G + alpha (theta_G - m u) = 0,   d_n phi = 0
//! ```
//!
//! and the control `u` on the boundary minimizes a tracking functional over a
//! box. All discrete objects live on uniform grids; see [`geometry`].

pub mod adjoint;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod optimize;
pub mod potentials;
pub mod sensitivity;
pub mod state;

pub use error::{Error, Result};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
