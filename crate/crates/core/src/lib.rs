//! Traffic flow forecasting with wavelet-disentangled sequences, a
//! dual-channel spatio-temporal encoder and spectral graph attention with
//! query sampling.

pub mod attention;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod graphs;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use numerics::{Tensor, Var};
