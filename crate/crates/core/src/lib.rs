//! Phase-response and sensitivity analysis for ODE oscillator models.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`orbit`]: the periodic orbit on a uniform phase grid, its frequency
//!    and Floquet multipliers.
//! 2. [`prc`]: the infinitesimal phase response curve from the adjoint
//!    problem, and finite-amplitude PRCs by direct perturbation.
//! 3. [`sensitivity`]: parameter sensitivities of the frequency, the orbit
//!    and the phase response curve.
//! 4. [`entrainment`]: averaged coupling functions, 1:1 locking points and
//!    their sensitivities.
//! 5. [`robustness`]: scalar robustness measures and rankings.

pub mod config;
pub mod entrainment;
pub mod error;
pub mod model;
pub mod odeint;
pub mod orbit;
pub mod prc;
pub mod robustness;
pub mod sensitivity;
pub mod spectral;

pub use error::{Error, Result};
