//! Command line and HTTP front ends for taskweave workflows.

mod launch;
pub mod server;

pub use launch::{build_backend, inspect, load_config, read_events, render_outcome, write_events, BackendChoice};
