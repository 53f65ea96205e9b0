//! Personal data vault gateway: the JSON-lines data store, the request and
//! grant lifecycle, the HTTP API and the `pdv` admin CLI, built on
//! `pdv-core`.

pub mod api;
pub mod cli;
pub mod config;
pub mod service;
pub mod store;
