//! Minimal deterministic numeric core: dense matrices, a recorded tape with
//! exact backpropagation, dense layers, MSE, Adam and seeded randomness.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod matrix;
pub mod rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_at};
pub use graph::{mse_value, Activation, DiffNode, Graph, Var};
pub use layers::{dense_forward, ActivationKind, Dense};
pub use matrix::Matrix;
pub use rng::{derive_seed, stable_hash64, Rng};
