//! Command line and HTTP front ends for the `setpiece` models.
//!
//! [`cli::run`] is the whole `setpiece` binary; [`api::router`] is the
//! service it starts with `serve`.

pub mod api;
pub mod cli;
pub mod models;
