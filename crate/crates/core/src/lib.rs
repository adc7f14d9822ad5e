pub mod autodiff;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod fieldgen;
pub mod models;
pub mod nn_optim;
pub mod numerics;
pub mod rng;
pub mod run;
pub mod solvers;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Fill, Tensor};
