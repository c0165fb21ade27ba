//! Replicated log of accepted position reports.
//!
//! Every node applies committed reports, in log order, to its own feed
//! snapshot through the matcher, so nodes that share a committed prefix
//! serve identical feeds. [`sim`] runs whole clusters on a virtual clock.

pub mod message;
pub mod node;
pub mod sim;
pub mod state_machine;
pub mod storage;

pub use message::{decode_body, encode_frame, read_frame, write_frame, Envelope, FrameError, LogEntry, Message, NodeId};
pub use node::{RaftConfig, RaftError, RaftNode, Role};
pub use sim::{chaos_script, simulate_cluster, ChaosPlan, Scenario, ScenarioError, SimEnv, Trace};
pub use state_machine::{apply_committed, FeedStateMachine};
pub use storage::{FileStorage, HardState, MemStorage, PersistentState, Storage};
