//! Extended blicket benchmark: environment, context graph, behavior
//! monitors, agent harness, traces, metrics and statistics.

pub mod defaults;
pub mod environment;
pub mod objects;
pub mod graph;
pub mod monitor;
pub mod prompt;
pub mod harness;
pub mod trace;
pub mod policies;
pub mod wire;
pub mod stats;
pub mod reference;
pub mod store;
pub mod metrics;
pub mod fixtures;
pub mod report;
pub mod experiment;
