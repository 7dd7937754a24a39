//! Library side of the medlinker binary: configuration resolution and
//! the HTTP service router, split out so integration tests can drive the
//! endpoints in process.

pub mod config;
pub mod service;
