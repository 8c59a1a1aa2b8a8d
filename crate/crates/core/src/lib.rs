//! Turn-level annotation of debt-collection call transcripts: synthetic
//! corpus generation, rolling-context requests, annotation backends, call
//! aggregation and evaluation.

pub mod aggregation;
pub mod backends;
pub mod context;
pub mod evaluation;
pub mod fraction;
pub mod io;
pub mod model;
pub mod simulator;
pub mod taxonomy;
