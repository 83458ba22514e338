pub mod autoencoder;
pub mod data;
pub mod deep;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rbm;

pub use error::{Error, Result};
pub use linalg::{MatmulAlgo, Matrix};
