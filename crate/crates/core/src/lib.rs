//! Chemotaxis–Navier–Stokes laboratory with tensor-valued sensitivity.
//!
//! The crate simulates
//!
//! ```text
//! n_t = Δn − ∇·(n S(x, n, c) ∇c) − u·∇n
//! c_t = Δc − n c − u·∇c
//! u_t = Δu − (u·∇)u + ∇P + n∇Φ,   ∇·u = 0
//! ```
//!
//! on rectangles with no-flux conditions for `n`, `c` and no-slip walls for
//! `u`, and provides the tools to measure decay rates, evaluate the
//! smallness-certificate constants, and check the certificate along a run.

pub mod commands;
pub mod config;
pub mod error;
pub mod fastdiag;
pub mod fluid;
pub mod grid;
pub mod io;
pub mod krylov;
pub mod ledger;
pub mod linalg;
pub mod monitor;
pub mod operators;
pub mod quadrature;
pub mod sensitivity;
pub mod spectral;
pub mod steppers;

pub use error::{Error, Result};
pub use grid::{OffsetField, RectDomain, ScalarField, SystemState, VectorField};
