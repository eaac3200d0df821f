//! Numerical lab for Allen-Cahn phase transitions on model surfaces.
//!
//! The crate builds the one-dimensional heteroclinic profile of a double-well
//! potential, the model linear operators around it, Fermi geometry of curves on
//! the flat torus, the round sphere and the unit disc, approximate solutions
//! concentrated near a curve, and two nonlinear solvers: a bordered Newton
//! method on the full discrete problem and a Lyapunov-Schmidt iteration that
//! alternates a projected linear solve with an interface update.

pub mod approx;
pub mod config;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod modelops;
pub mod norms;
pub mod potential;
pub mod profile;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
