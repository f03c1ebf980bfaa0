pub mod adaptation;
pub mod data;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod rnnt_loss;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{OptimConfig, ParamStore, Tensor};
