//! Semi-automatic construction of document classification schemas.
//!
//! The pipeline clusters a corpus into a typology, turns the typology into
//! an ontology through an edit log, and classifies documents with n-gram
//! rules written in a small Datalog dialect.

pub mod corpus;
pub mod vectorize;
pub mod cluster;
pub mod schema;
pub mod rules;
pub mod synth;
pub mod project;
