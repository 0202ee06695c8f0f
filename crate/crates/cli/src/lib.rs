//! Library side of the `adapool` command-line harness.
//!
//! The binary in `main.rs` is a thin dispatcher over these modules so
//! the commands stay testable.

pub mod alloc_track;
pub mod bench;
pub mod error;
pub mod evalrun;
pub mod fit;
pub mod imageio;
pub mod maskfile;
pub mod methods;

pub use error::{CliError, CliResult};

/// Heap usage is tracked process-wide so `bench` can report peak
/// allocation per method.
#[global_allocator]
static GLOBAL: alloc_track::TrackingAllocator = alloc_track::TrackingAllocator;
