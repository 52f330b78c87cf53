//! Variable-size adaptive information bottleneck for conditional auto-encoders.
//!
//! The latent code of an encoder–decoder pair is passed through a dropout
//! bottleneck whose rate is chosen per frame from a target effective size,
//! so the capacity can differ between data classes and be opened fully at
//! inference. The crate contains the numeric core, the bottleneck mechanisms,
//! a synthetic controllable corpus with an analytic control estimator, the
//! auto-encoder with its training loop, and the evaluation metrics.

pub mod bottleneck;
pub mod container;
pub mod error;
pub mod eval;
pub mod model;
pub mod ndcore;
pub mod synthdata;

pub use error::{Error, Result};
