//! Analysis context in replicated mode: drives the consensus node, forwards
//! reports to the leader, and applies committed entries to the feed.

use std::collections::VecDeque;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rtfeed_core::wire::{decode_packet, encode_packet};
use rtfeed_raft::{FeedStateMachine, FileStorage, Message, NodeId, RaftNode, Role};

use crate::service::{Input, Shared};
use crate::transport::PeerTransport;

/// Reports held while no leader is known.
const MAX_PENDING: usize = 4096;
const MAX_WAIT: Duration = Duration::from_millis(100);
const DRAIN_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaStatus {
    pub id: NodeId,
    pub role: Role,
    pub term: u64,
    pub leader: Option<NodeId>,
    pub last_index: u64,
    pub commit_index: u64,
    pub applied_index: u64,
    pub decode_failures: u64,
}

pub struct Replica {
    shared: Arc<Shared>,
    node: RaftNode<FileStorage>,
    sm: FeedStateMachine,
    transport: PeerTransport,
    pending: VecDeque<Vec<u8>>,
    epoch: Instant,
}

impl Replica {
    pub fn new(shared: Arc<Shared>, node: RaftNode<FileStorage>, sm: FeedStateMachine, transport: PeerTransport, epoch: Instant) -> Self {
        Self { shared, node, sm, transport, pending: VecDeque::new(), epoch }
    }

    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    pub fn run(mut self) {
        while !self.shared.shutdown.load(Ordering::Relaxed) {
            let now = self.now_ms();
            let wait = Duration::from_millis(self.node.next_deadline().saturating_sub(now).max(1)).min(MAX_WAIT);
            if let Some(input) = self.shared.queue.pop_timeout(wait) {
                self.handle(input);
                for _ in 0..DRAIN_BATCH {
                    match self.shared.queue.try_pop() {
                        Some(input) => self.handle(input),
                        None => break,
                    }
                }
            }
            let now = self.now_ms();
            if let Err(e) = self.node.tick(now) {
                log::error!("consensus storage failure: {e}");
            }
            self.flush_pending();
            for env in self.node.take_messages() {
                self.transport.send(env.to, &env.msg);
            }
            self.apply();
        }
        self.transport.close();
    }

    fn handle(&mut self, input: Input) {
        match input {
            Input::Report(report) => match encode_packet(&report) {
                Ok(bytes) => self.submit(bytes.to_vec(), None),
                Err(e) => log::warn!("dropping unencodable report: {e}"),
            },
            Input::Peer(from, Message::ForwardReport { report }) => {
                if decode_packet(&report).is_ok() {
                    self.submit(report, Some(from));
                } else {
                    log::warn!("node {from} forwarded a malformed report");
                }
            }
            Input::Peer(from, msg) => {
                let now = self.now_ms();
                if let Err(e) = self.node.step(now, from, msg) {
                    log::error!("consensus storage failure: {e}");
                }
            }
        }
    }

    /// Proposes locally if leading, else forwards toward the known leader,
    /// else holds the report until a leader is known.
    fn submit(&mut self, command: Vec<u8>, came_from: Option<NodeId>) {
        if self.node.role() == Role::Leader {
            if let Err(e) = self.node.propose(command) {
                log::error!("cannot append report: {e}");
            }
            return;
        }
        match self.node.leader_hint() {
            // never bounce a report straight back to the node that sent it
            Some(leader) if Some(leader) != came_from => {
                self.transport.send(leader, &Message::ForwardReport { report: command });
                self.shared.counters.forwarded();
            }
            _ => {
                if self.pending.len() == MAX_PENDING {
                    self.pending.pop_front();
                }
                self.pending.push_back(command);
            }
        }
    }

    fn flush_pending(&mut self) {
        let leader_known = self.node.role() == Role::Leader || self.node.leader_hint().is_some();
        if leader_known {
            for command in std::mem::take(&mut self.pending) {
                self.submit(command, None);
            }
        }
    }

    fn apply(&mut self) {
        let vehicles = self.shared.vehicles.read().unwrap().clone();
        self.sm.set_vehicles(vehicles);
        let entries = self.node.take_committed();
        if !entries.is_empty() {
            let before = self.sm.decode_failures();
            let reports = entries.iter().filter(|e| !e.command.is_empty()).count() as u64;
            for e in &entries {
                self.sm.apply(e);
            }
            self.shared.counters.applied(reports - (self.sm.decode_failures() - before));
            self.shared.publish(self.sm.feed().clone());
        }
        *self.shared.replica.lock().unwrap() = Some(ReplicaStatus {
            id: self.node.id(),
            role: self.node.role(),
            term: self.node.term(),
            leader: self.node.leader_hint(),
            last_index: self.node.last_index(),
            commit_index: self.node.commit_index(),
            applied_index: self.sm.applied_index(),
            decode_failures: self.sm.decode_failures(),
        });
    }
}
