//! Config-driven mixture-of-HMMs inference over multivariate categorical
//! time series.
//!
//! The pipeline ingests a longitudinal CSV plus an INI description of its
//! markers, extracts one categorical HMM per observed marker (all sharing the
//! hidden marker's transition structure), and answers queries against the
//! weighted mixture: smoothed posteriors, future-state extrapolation, optimal
//! hidden-state sequences, and raw parameter export. A seeded synthetic
//! generator and a k-fold cross-validation harness close the loop for
//! end-to-end evaluation.

pub mod config;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod hmm;
pub mod ingest;
pub mod mixture;
pub mod synthgen;

pub use error::{Error, Result};
