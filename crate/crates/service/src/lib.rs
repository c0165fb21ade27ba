//! The vehicle-positions server: UDP ingest, trip matching, the HTTP feed,
//! and optional replication of accepted reports across a small cluster.

pub mod config;
pub mod counters;
pub mod queue;
pub mod replica;
pub mod service;
pub mod transport;

pub use config::{ConfigError, ConfigPairs, Peer, ServiceConfig};
pub use counters::{CounterSnapshot, Counters, Reject};
pub use queue::DropOldestQueue;
pub use replica::ReplicaStatus;
pub use service::{startup, unix_now, ServiceHandle, StartupError, DEBUG_PATH, FEED_PATH, HEALTH_PATH, RELOAD_PATH};
