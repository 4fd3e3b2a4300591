//! Deterministic discrete-event simulator of a heterogeneous cloud cluster
//! with Pareto-tail straggler prediction (an Encoder-LSTM estimates the tail
//! parameters per job) and speculation / re-run mitigation, plus baseline
//! policies and a QoS metric suite.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: cluster types and predictor feature matrices
//! - [`pareto`]: tail fitting, straggler threshold and expected count
//! - [`neural`]: encoder, LSTM, head, BPTT and Adam
//! - [`predictor`]: observation windows, labels, training
//! - [`sim`]: event queue, workload, faults, scheduler, engine
//! - [`mitigation`]: straggler policies
//! - [`metrics`]: QoS formulas and reports
//! - [`config`] and [`experiment`]: config files and the experiment commands
//!
//! Runnable walkthroughs live in `examples/`.

// `!(x > 0.0)` is the idiom here for rejecting NaN along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod model;
pub mod neural;
pub mod metrics;
pub mod mitigation;
pub mod pareto;
pub mod predictor;
pub mod sim;

pub use error::{Error, Result};
