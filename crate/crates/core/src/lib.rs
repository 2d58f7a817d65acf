//! Block-wise asynchronous consensus ADMM.
//!
//! Workers hold private loss shards and per-edge primal/dual state; block
//! servers own disjoint slices of the shared model and fold worker pushes
//! into a proximally regularized average. The [`transport`] module runs the
//! two state machines synchronously, under a deterministic delay simulator,
//! or on real threads; [`metrics`] scores the iterates against stationarity
//! and step-size conditions that predict convergence.

pub mod block;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod message;
pub mod metrics;
pub mod problems;
pub mod server;
pub mod topology;
pub mod trajectory;
pub mod transport;
pub mod worker;

pub use error::{Error, Result};
