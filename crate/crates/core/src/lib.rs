//! Solver and verification harness for the truncated coagulation equation
//! with multiple fragmentation.
//!
//! The crate discretizes the truncated problem on a geometric grid with
//! exactly conservative operator tables, integrates it with explicit
//! steppers, and checks the trajectories against mass identities, a priori
//! moment and tail bounds, weak-form residuals and analytic solutions.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod discretization;
pub mod error;
pub mod harness;
pub mod initial;
pub mod kernels;
pub mod quadrature;
pub mod report;
pub mod solver;

pub use error::{Error, Result};
