//! Command-line front end and HTTP session service for `pconj-core`.

pub mod cli;
pub mod service;
