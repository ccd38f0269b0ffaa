//! Measuring knowledge proximity between academic and industry research.
//!
//! The crate loads a corpus of papers with author affiliations, extracted
//! entities, text embeddings and citation edges, and computes per-year
//! similarity, network and citation-flow measures plus the regression,
//! stability and matching studies built on them.

pub mod citeflow;
pub mod config;
pub mod coocnet;
pub mod corpus;
pub mod entnorm;
pub mod entsim;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod semsim;
pub mod stats;
pub mod studies;

pub use error::{Error, Result};
