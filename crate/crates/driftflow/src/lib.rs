//! Continuous-time models of gradient descent at desk scale.
//!
//! Gradient descent with step size `h` does not follow the gradient flow it
//! nominally discretises. This crate implements the continuous flows that
//! descent *does* follow to higher order (the inertial-gradient and
//! third-order corrections, and the principal flow built from the full
//! logarithm of the one-step operator) together with the machinery needed to
//! study them: exact and finite-difference calculus on small problems,
//! stability classification of critical points, drift-aware learning rates,
//! two-player game dynamics with their own modified flows and regularisers,
//! and the geometric-complexity measure for small networks.
//!
//! Everything here targets problems of a few hundred parameters at most, so
//! dense linear algebra is used throughout and exactness is preferred over
//! scalability.
//!
//! The crate is organised by subject:
//!
//! * [`calculus`]: dense eigendecompositions with a fixed ordering and sign
//!   convention, finite-difference oracles, and a matrix exponential.
//! * [`problems`]: the test problems. Quadratics, the Rosenbrock banana, a
//!   one-dimensional cosine, small MLPs with exact derivatives, and the
//!   two-player games.
//! * [`flows`]: flow coefficients, modified vector fields, an adaptive
//!   integrator, and the closed-form principal flow on quadratics.
//! * [`optimizers`]: the discrete steppers. Plain and momentum gradient
//!   descent, drift-adjusted learning rates, game steppers, and two-batch SGD.
//! * [`stability`]: regime classification along eigendirections, stability
//!   reports, and the modified Jacobians of game discretisations.
//! * [`games`]: modified game fields in both time conventions, modified
//!   losses for zero-sum and common-payoff games, explicit regularisers, and
//!   the SGD modified loss.
//! * [`measures`]: per-iteration drift, order-of-accuracy estimation, and
//!   geometric complexity.
//! * [`repro`]: named headline experiments with machine-checkable outcomes.

pub mod calculus;
pub mod error;
pub mod flows;
pub mod games;
pub mod measures;
pub mod optimizers;
pub mod problems;
pub mod repro;
pub mod stability;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book;
