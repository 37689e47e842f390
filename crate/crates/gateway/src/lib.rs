//! HTTP gateway for the enclave: REST API, embedded workers and the
//! `enclave` command-line client.

pub mod api;
pub mod cli;
pub mod error;
pub mod server;
pub mod service;
pub mod templates;
