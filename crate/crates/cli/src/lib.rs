//! Library side of the `apportion` command: configuration, pipeline stages
//! and output bundles, shared by the binary and its tests.

pub mod bundle;
pub mod config;
pub mod pipeline;
