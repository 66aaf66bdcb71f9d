//! Particle solvers for doubly mean-reflected mean-field BSDEs with nonlinear resistance.
//!
//! The crate is `no_std` with `alloc`. Laws are equal-weight empirical measures over a
//! particle ensemble; compensators are deterministic grid functions.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bsde;
pub mod bv;
pub mod ensemble;
pub mod error;
pub mod generator;
pub mod grid;
pub mod loss;
pub mod matrix;
pub mod meanreflect;
pub mod measure;
pub mod resistance;
pub mod roots;
pub mod skorokhod;
pub mod solution;

pub use bv::{bv_decompose, BVPath};
pub use ensemble::{simulate_brownian, ParticleEnsemble};
pub use error::{Error, Result};
pub use generator::{DriverInput, GeneratorSpec, Regime, ResistanceKind, ResistanceSpec};
pub use grid::{make_grid, TimeGrid};
pub use loss::{check_loss_assumptions, LossPair, LossProbe, LossReport};
pub use matrix::PathMatrix;
pub use measure::{w1_distance, EmpiricalMeasure};
pub use solution::{Diagnostics, SolutionTriple};
