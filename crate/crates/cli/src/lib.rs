//! Command-line driver for the quantized GEMM laboratory: packs seeded
//! weights, runs the variant matrix, verifies numerics and renders reports.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod verify;

pub use commands::Options;
pub use config::RunConfig;
pub use error::CliError;
pub use report::BenchReport;
