//! Pseudo-spectral toolkit for convex-integration constructions for the
//! fractionally dissipative Boussinesq system on the periodic torus.
//!
//! Fields are band-limited trigonometric polynomials on `[0, 1)^d`
//! (`d ∈ {2, 3}`), time-dependent quantities live on non-uniform time grids,
//! and every nonlinear product is evaluated without aliasing, so the discrete
//! algebraic identities of the construction hold to round-off.

pub mod blocks;
pub mod calculus;
pub mod convex;
pub mod driver;
pub mod error;
pub(crate) mod fft;
pub mod field;
pub mod geometry;
pub mod gluing;
pub mod imex;
pub mod intervals;
pub mod params;
pub mod products;
pub mod snapshot;
pub mod state;
pub mod suites;
pub mod synth;
pub mod time;
pub mod verify;

pub use error::{Error, Result};
pub use field::{Complex64, PhysicalField, Shape, SpectralField};
pub use geometry::DirectionFamily;
pub use intervals::IntervalSet;
pub use state::ReynoldsQuadruple;
pub use time::{MixedNormSpec, TimeField, TimeGrid};
