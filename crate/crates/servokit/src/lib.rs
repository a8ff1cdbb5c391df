//! Simulator, benchmark harness, file formats and CLI support for
//! `servokit-core`.

pub mod bench;
pub mod cli;
pub mod error;
pub mod formats;
pub mod seeds;
pub mod verify;
pub mod sim;

pub use error::{BenchError, FormatError, SimError};
