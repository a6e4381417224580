//! Desk-scale laboratory for GPTQ 4-bit quantized GEMM kernels.
//!
//! The crate is layered bottom-up:
//!
//! * [`f16core`] - bit-exact binary16 scalar and packed (`Half2`) arithmetic.
//! * [`gptq_format`] - the packed 4-bit weight container and its `GQ4S` file format.
//! * [`simt_sim`] - a deterministic SIMT harness with shared memory, barriers,
//!   half2 atomics and instruction/memory counters.
//! * [`kernels`] - the quantized GEMM kernel family (baseline plus the shared-memory
//!   buffered store, vectorized A-tile loads and packed-instruction variants) and
//!   reference oracles.
//! * [`perf_model`] - closed-form counter predictions and a weighted cost proxy.
//! * [`rng`] - the SplitMix64 generator used for all seeded test data.

pub mod f16core;
pub mod gptq_format;
pub mod kernels;
pub mod perf_model;
pub mod rng;
pub mod simt_sim;

pub use f16core::{Half, Half2};
pub use gptq_format::QuantizedWeight;
pub use kernels::{GemmProblem, TileParams, VariantFlags};
pub use simt_sim::{CounterSet, DeviceContext};
