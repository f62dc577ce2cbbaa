//! Numerical laboratory for weak geodesic lines in spaces of Kahler
//! potentials on discretized compact Riemann surfaces.
//!
//! The crate builds two model surfaces (a flat torus and a round sphere in a
//! stereographic chart), constructs families of omega-subharmonic potentials
//! with prescribed logarithmic singularities, and realizes the Legendre-type
//! correspondence between geodesic lines of potentials and their dual test
//! lines. Verification routines check the defining PDE residual, mass
//! statements and energy slopes on the discrete level.

pub mod envelopes;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lines;
pub mod potentials;
pub mod transform;
pub mod verify;

pub use error::{KglError, Result};
pub use geometry::{GridKind, SurfaceGrid};

/// Sentinel for the minus-infinity value of an unbounded potential.
/// IEEE arithmetic gives the right absorption rules: `BOTTOM + x = BOTTOM`,
/// `max(BOTTOM, x) = x`, `min(BOTTOM, x) = BOTTOM`.
pub const BOTTOM: f64 = f64::NEG_INFINITY;
