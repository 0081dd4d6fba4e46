//! Numerical laboratory for quantitative homogenization of random, uniformly
//! convex integral functionals.
//!
//! The crate samples random Lagrangians on the unit lattice, minimizes
//! their discrete energies with P1 finite elements, and runs ensembles of
//! cell problems and large-scale regularity experiments.

pub mod bump;
pub mod cell;
pub mod config;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod homogenized;
pub mod lagrangian;
pub mod linalg;
pub mod mesh;
pub mod norms;
pub mod registry;
pub mod rng;
pub mod solvers;
pub mod stats;
pub mod sparse;

pub use error::{Error, Result};
