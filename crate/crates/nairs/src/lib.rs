//! File formats, reports, the HTTP service and the command line around
//! `nairs-core`.

pub mod cache;
pub mod cli;
pub mod config;
pub mod error;
pub mod events;
pub mod io;
pub mod reports;
pub mod service;
pub mod snapshot;
