//! Connection management for dense cellular networks: random deployments, a
//! graph-neural-network Q-function trained with deep Q-learning, an xApp-style
//! handover service, and benchmarking against max-RSRP association.

pub mod bench;
pub mod dqn;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod net_model;
pub mod xapp;

pub use error::{Error, Result};
