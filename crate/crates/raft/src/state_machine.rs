//! Applies committed log entries to a feed snapshot.

use std::sync::Arc;

use rtfeed_core::feed::{FeedSnapshot, DEFAULT_FEED_TTL_SECS};
use rtfeed_core::matcher::{match_position, Schedule};
use rtfeed_core::vehicles::VehicleMap;
use rtfeed_core::wire::decode_packet;

use crate::message::LogEntry;
use crate::node::RaftNode;
use crate::storage::Storage;

/// The replicated state: a feed built only from committed reports.
///
/// The feed clock is logical: the newest report timestamp applied so far.
/// Header timestamps and eviction therefore depend only on the log, so two
/// nodes that applied the same prefix encode identical bytes.
#[derive(Clone)]
pub struct FeedStateMachine {
    schedule: Arc<Schedule>,
    vehicles: Arc<VehicleMap>,
    feed: FeedSnapshot,
    clock: u64,
    feed_ttl: u64,
    applied_index: u64,
    decode_failures: u64,
}

impl FeedStateMachine {
    pub fn new(schedule: Arc<Schedule>, vehicles: Arc<VehicleMap>) -> Self {
        Self {
            schedule,
            vehicles,
            feed: FeedSnapshot::new(0),
            clock: 0,
            feed_ttl: DEFAULT_FEED_TTL_SECS,
            applied_index: 0,
            decode_failures: 0,
        }
    }

    pub fn with_ttl(mut self, ttl: u64) -> Self {
        self.feed_ttl = ttl;
        self
    }

    pub fn feed(&self) -> &FeedSnapshot {
        &self.feed
    }

    pub fn applied_index(&self) -> u64 {
        self.applied_index
    }

    pub fn decode_failures(&self) -> u64 {
        self.decode_failures
    }

    pub fn set_vehicles(&mut self, vehicles: Arc<VehicleMap>) {
        self.vehicles = vehicles;
    }

    /// Applies one committed entry. Empty commands are the leader's no-ops;
    /// undecodable ones count as failures and are skipped.
    pub fn apply(&mut self, entry: &LogEntry) {
        debug_assert_eq!(entry.index, self.applied_index + 1, "entries applied out of order");
        self.applied_index = entry.index;
        if entry.command.is_empty() {
            return;
        }
        let report = match decode_packet(&entry.command) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("entry {}: undecodable command: {e}", entry.index);
                self.decode_failures += 1;
                return;
            }
        };
        self.clock = self.clock.max(report.timestamp);
        let record = match_position(&report, &self.vehicles, &self.schedule);
        self.feed.apply_record(record, self.clock);
        self.feed.evict_stale(self.clock, self.feed_ttl);
    }
}

/// Applies every entry in `(last_applied, commit_index]` of `node` to `sm`
/// in log order. Returns how many were applied.
pub fn apply_committed<S: Storage>(node: &mut RaftNode<S>, sm: &mut FeedStateMachine) -> usize {
    let entries = node.take_committed();
    for e in &entries {
        sm.apply(e);
    }
    entries.len()
}
