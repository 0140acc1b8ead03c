//! Optimal control in coefficients for a coupled nonlinear elliptic and
//! Hammerstein system on rasterized planar domains.
//!
//! The crate is organized bottom-up:
//!
//! - [`geometry`]: rasterized domains, perturbation families, set metrics
//! - [`control`]: admissible diagonal/symmetric matrix controls
//! - [`state`]: the discrete p-Laplacian-type Dirichlet problem
//! - [`hammerstein`]: the integral equation `z + B F(y, z) = g`
//! - [`optimizer`]: projected gradient on reduced control profiles
//! - [`stability`]: optimal values and states along domain perturbations
//! - [`config`], [`report`]: JSON configs, command dispatch, output files

pub mod error;
pub mod geometry;
pub mod grid;
pub mod par;

pub use error::{LabError, Result};
pub use grid::GridSpec;
pub mod control;
pub mod num;
pub mod linalg;
pub mod state;
pub mod hammerstein;
pub mod optimizer;
pub mod stability;
pub mod config;
pub mod report;
pub mod cli;
