//! Community-level bot population estimation.
//!
//! Feature-, text- and graph-based classifiers are trained on labeled
//! accounts, temperature-calibrated on a held-out split, and combined with
//! learned weights. A community's bot fraction is the share of its members
//! whose weighted, calibrated probability vector favours the bot class.

pub mod bundle;
pub mod calibration;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod ingest;
pub mod nn;
pub mod pipeline;
pub mod synth;
pub mod tabular;
pub mod text;
pub mod types;

pub use error::{Error, Result};
pub use types::{Label, LogitPair, ProbPair};
