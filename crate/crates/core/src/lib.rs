//! Six-dimensional movable antenna (6DMA) base station simulation.
//!
//! The crate covers candidate pose geometry, multipath channel synthesis,
//! statistical channel estimation (sparsity detection plus power
//! reconstruction), pose selection by particle swarm optimization and
//! support-restricted instantaneous channel estimation.

// `!(x > 0.0)` also rejects NaN; index loops read closer to the math
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod channel;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod inst_estimation;
pub mod placement;
pub mod rng;
pub mod stat_estimation;

pub use error::{Error, Result};
