//! Finite-volume solver for the kinetic mean-field equation on a truncated
//! rectangle.

pub mod grid;
pub mod norms;
pub mod scheme;
pub mod solve;

pub use grid::{Density, Grid2D, Moments};
pub use norms::{l1_big_m_norm, l1m_norm, l2m_distance, l2m_norm};
pub use scheme::{step, PhaseField, PureDiffusion, Stencil, Stepper};
pub use solve::{solve, solve_with, Coupling, SolveOptions, TimeSeries};
