pub mod annotation;
pub mod codec;
pub mod config;
pub mod corpus;
pub mod detector;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
