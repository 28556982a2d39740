//! Spectral inequalities, dissipation estimates, and null-controllability
//! probes for matrix-valued Fourier multipliers on periodized grids.
//!
//! The crate discretizes C^n-valued fields on the torus (R / Q Z)^d and
//! provides, on top of that:
//!
//! * thickness certification for control regions and uncertainty-principle
//!   probes for band-limited fields ([`thick`], [`ls`]);
//! * matrix symbols a(xi) with a normal-ellipticity check and derived
//!   resolvent sectors ([`symbol`]);
//! * the semigroup exp(-t a(D)) applied per frequency, with decay and
//!   dissipation diagnostics ([`propagator`]);
//! * observability constants and a dyadic spectral-stage control synthesis
//!   driven by a conjugate-gradient solve of the stage normal equations
//!   ([`control`]).
//!
//! Everything is deterministic: random draws are counter-based from
//! explicit (seed, stream) pairs, and reductions are ordered.

pub mod bump;
pub mod config;
pub mod control;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod ls;
pub mod propagator;
pub mod report;
pub mod rng;
pub mod symbol;
pub mod thick;

pub use error::{Error, Result};
