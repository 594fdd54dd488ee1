//! The recognition network and its stages.
//!
//! # Cost convention
//!
//! The analyzers count per-sample inference work. Every weight tap is one
//! multiply-accumulate (taps that read zero padding included). Bias adds,
//! batch-norm affines, activations, residual adds and softmax entries cost
//! one op per element. Reshapes and permutes are free.

pub mod cfb;
pub mod config;
pub mod csi;
pub mod gta;
pub mod local_temporal;
pub mod mfe;
pub mod mom;
pub mod network;

pub use config::ModelConfig;
pub use network::{FlopReport, Model, Network};
