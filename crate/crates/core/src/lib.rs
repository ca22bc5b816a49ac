//! Over-parameterized deep ReLU networks with exact gradients, GD/SGD training,
//! finite-width tangent kernels and measurement probes for their theory.

pub mod archext;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod io;
pub mod landscape;
pub mod linalg;
pub mod netcore;
pub mod ntk;
pub mod rng;
pub mod theoryprobes;
pub mod training;

pub use error::{Error, Result};
