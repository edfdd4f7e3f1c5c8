//! Dynamic task assignment on attributed action-evolution Petri nets.
//!
//! The pipeline is: a marked net ([`net`]) is expanded so every place holds
//! at most one token and every enabled action binding becomes its own
//! transition ([`expansion`]); the expanded net is mapped to a typed
//! assignment graph ([`graph`]) whose action nodes are the agent's choices.
//! [`env`] wraps this as an episodic environment, [`nn`] provides the
//! heterogeneous graph attention policy/value networks, and [`ppo`] trains
//! them. [`problems`] builds the benchmark instances and [`benchmarks`] the
//! results table.

pub mod net;
pub mod expansion;
pub mod graph;
pub mod env;
pub mod problems;
pub mod nn;
pub mod ppo;
pub mod benchmarks;
