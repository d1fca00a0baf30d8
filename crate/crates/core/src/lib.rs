//! Spiking graph neural networks: spike-driven graph convolution and
//! attention layers, spatial-temporal feature normalization, rate and
//! rank-order coding, surrogate-gradient training and operation accounting.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod spiking;
pub mod stfn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
