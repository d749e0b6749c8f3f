//! Numerical laboratory for 3-D incompressible MHD without magnetic
//! diffusion, linearized and solved near the steady state (e3, 0).
//!
//! The crate provides periodic pseudo-spectral fields, anisotropic
//! Littlewood-Paley analysis and Besov-type norms, the damped-wave
//! dispersion relation of the linearized system, a Lagrangian
//! reformulation with its field-straightening change of coordinates,
//! Eulerian and Lagrangian time steppers, and a battery of numerical
//! checks for the energy estimates and product/interpolation
//! inequalities that drive the global-existence argument.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fft;
pub mod field_straightening;
pub mod fields;
pub mod inequality_lab;
pub mod linear_theory;
pub mod littlewood_paley;
pub mod nonlinear_solver;

pub use error::{Error, Result};
