//! Solver and verification toolkit for linear-quadratic mean-field games
//! with common noise.
//!
//! The crate solves the coupled backward Riccati/offset systems of the
//! N-agent game and of its mean-field limit, builds centralized and
//! decentralized feedback strategies by two independent routes (direct and
//! consistency-condition), simulates the closed-loop population with seeded
//! Euler-Maruyama Monte Carlo, and measures the asymptotic equilibrium
//! claims (gap decay rates, stationarity residuals, deviation tests).
//!
//! Scenario batches run in parallel via rayon when the default `parallel`
//! feature is enabled; disabling it falls back to sequential execution with
//! bitwise-identical results.

pub mod error;
pub mod export;
pub mod feedback;
pub mod fixedpoint;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod offsets;
pub mod riccati;
pub mod rk4;
pub mod rng;
pub mod schedule;
pub mod sim;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{build_grid, TimeGrid};
pub use model::{
    production_planning_config, production_preset, validate_config, GameConfig, ProductionParams,
    ValidationReport,
};
