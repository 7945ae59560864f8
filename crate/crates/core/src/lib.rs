//! Analytic core of the swap toolkit: a GBM price model, the quadrature and
//! root-finding it needs, and backward-induction solvers for the HTLC atomic
//! swap game and the premium-backed Quick Swap game.

pub mod htlcgame;
pub mod numerics;
pub mod pricemodel;
pub mod quickswapgame;

/// Durations and timestamps, in hours.
pub type Hours = f64;

pub use htlcgame::{HtlcGame, SolverOptions, SrGrid, SwapParams};
pub use pricemodel::{GbmParams, PriceState};
