//! Numerical chordal SLE_κ.
//!
//! The crate discretizes the chordal Loewner equation with piecewise
//! constant driving functions (compositions of vertical slit maps), tracks
//! interior points and their conformal radii, evaluates the Green's function
//! and its local martingales, samples SLE conditioned to pass through an
//! interior or boundary point, and assembles the discretized natural
//! parametrization of the curve inside a box.
//!
//! Module map:
//!
//! * [`loewner`]: driving paths, slit maps, point flows, traces, inverse maps.
//! * [`observables`]: Green's function, one- and two-point martingales,
//!   harmonic measure, L-shape geometry.
//! * [`diffusions`]: the radial angle diffusion, Bessel processes, ψ(t, x).
//! * [`conditioned`]: two-sided radial and chordal samplers and estimators
//!   built on them.
//! * [`natparam`]: φ, its cached grid, Ψ_t(D), Θ_{t,n}(D) and the
//!   Minkowski-type estimator.
//! * [`mc`], [`quad`], [`stats`], [`geometry`]: shared plumbing.

pub mod conditioned;
pub mod diffusions;
pub mod error;
pub mod geometry;
pub mod loewner;
pub mod mc;
pub mod natparam;
pub mod observables;
pub mod params;
pub mod quad;
pub mod stats;

pub use error::{Result, SleError};
pub use mc::McEstimate;
pub use num_complex::Complex64;
pub use params::SleParams;
