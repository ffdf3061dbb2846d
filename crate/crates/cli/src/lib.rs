//! Command line and HTTP front ends of the ontology designer.

pub mod cli;
pub mod export;
pub mod service;

pub use cli::run;
