//! Deterministic discrete-event machinery: topology, event ordering, run log,
//! seeded randomness and scenario loading.

mod event;
mod log;
pub mod rng;
mod scenario;
mod topology;

pub use event::{
    EventKey, EventQueue, NetEvent, NetEventKind, Target, TargetMismatch, INTERNAL_RANK_BASE,
};
pub use log::{EventLog, LogRecord};
pub use scenario::{load_scenario, load_scenario_file, Attachment, Scenario, ScenarioError};
pub use topology::{
    connected_components, random_connected, Link, NodeRef, Status, TopologyError, TopologyGraph,
};

/// Virtual milliseconds since the start of a run.
pub type VirtualTime = u64;
