//! Live runtime for the dual-loop allocator: configuration, backend
//! selection, the threaded runtime, the HTTP API and the command line.

pub mod api;
pub mod backend;
pub mod cli;
pub mod config;
pub mod runtime;
