//! Scheduling and pricing of flexible, non-preemptive electrical loads.
//!
//! The crate solves the relaxed social planner's problem for a single-bus
//! market with one thermal + renewable generator, recovers the dual
//! certificate, turns it into consumption and flexibility prices, and checks
//! that those prices support a competitive equilibrium. It also contains an
//! exact branch-and-bound solver for the binary problem, the replication and
//! randomized-assignment machinery, and CSV ingestion for EV charging data.
//!
//! Slot indices exposed by public functions are 1-based (`1..=T`); vectors
//! are stored 0-based, so `vec[t - 1]` holds slot `t`.

pub mod equilibrium;
pub mod error;
pub mod ingest;
pub mod milp;
pub mod model;
pub mod planner;
pub mod qp;
pub mod replication;
pub mod synth;
pub mod window;

pub use error::{Error, Result};
pub use model::{GeneratorModel, Instance, LoadType, TimeGrid};
