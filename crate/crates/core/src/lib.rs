//! Simulation and verification of branching Pólya point processes.
//!
//! The crate builds finite ground spaces, samples Poisson, Pólya sum, and
//! Pólya difference processes and their branchings, and checks the structural
//! identities these processes satisfy — partial integration of the Campbell
//! measure, cocycle conditions for branching kernels, Palm and superposition
//! decompositions, Laplace functionals, and conditional limits along an
//! exhaustion — exactly where small discrete spaces allow enumeration, and
//! statistically elsewhere.

pub mod boundary;
pub mod branching;
pub mod campbell;
pub mod config;
pub mod error;
pub mod laplace;
pub mod point;
pub mod process;
pub mod report;
pub mod rng;
pub mod runner;
pub mod space;
pub mod stats;

pub use error::{Error, Result};
