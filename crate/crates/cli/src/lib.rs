//! Training, evaluation, parameter counting, benchmarking and wavelet
//! inspection around the `wavemix` library. The binary dispatches into this
//! crate so integration tests can drive every command in-process.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod imageio;
pub mod metrics;
pub mod trainer;
