//! Chebyshev polynomial image classification: basis and 2D expansions,
//! a small autodiff tensor engine, Chebyshev convolution layers, graph
//! spectral filters, training, metrics and persistence.

pub mod cheb;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use nn::{Model, NetworkSpec};
pub use tensor::{Tape, Tensor, Var};
