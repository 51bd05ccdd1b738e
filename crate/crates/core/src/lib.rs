//! Kinetic simulator for relativistic collisionless matter coupled to a
//! scalar gravitational field, together with a verification suite for the
//! conservation laws and integral identities the model satisfies.
//!
//! The system evolves a phase-space density `f(t,x,p)` through the
//! characteristic flow
//!
//! ```text
//! dx/ds = p / sqrt(1 + |p|^2)
//! dp/ds = -(S phi) p - grad(phi) / sqrt(1 + |p|^2)
//! ```
//!
//! coupled to the sourced wave equation `d^2t phi - lap phi = -mu` with
//! `mu = integral of f dp / sqrt(1 + |p|^2)`. Matter is represented by
//! deterministically sampled particles (a particle-in-cell scheme with
//! cloud-in-cell deposition); the field by a leapfrog solver on a uniform
//! cubic grid sized so that no signal ever reaches the boundary.
//!
//! Besides the simulator proper, the crate ships stand-alone numerical
//! checks of every algebraic identity, momentum-ball bound, and
//! representation formula used in the analysis of this system: see
//! [`identities`] and [`diagnostics`].

pub mod config;
pub mod diagnostics;
pub mod driver;
pub mod error;
pub mod field;
pub mod grid;
pub mod identities;
pub mod initial;
pub mod math;
pub mod output;
pub mod parallel;
pub mod pusher;
pub mod quad;
pub mod state;

pub use error::{Result, SimError};
pub use math::Vec3;
