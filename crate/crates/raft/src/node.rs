//! Event-driven consensus core. The caller owns the clock and the transport:
//! it feeds `tick`, `step` and `propose`, then drains `take_messages` and
//! `take_committed`. Times are milliseconds on any monotonic scale.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::message::{Envelope, LogEntry, Message, NodeId};
use crate::storage::{HardState, Storage};

pub const DEFAULT_ELECTION_TIMEOUT_MS: (u64, u64) = (150, 300);
pub const DEFAULT_HEARTBEAT_MS: u64 = 50;
/// Entries carried by one AppendEntries message.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone)]
pub struct RaftConfig {
    pub id: NodeId,
    pub peers: Vec<NodeId>,
    pub election_timeout_ms: (u64, u64),
    pub heartbeat_ms: u64,
    /// Seeds the election-timeout generator.
    pub seed: u64,
}

impl RaftConfig {
    pub fn new(id: NodeId, peers: Vec<NodeId>, seed: u64) -> Self {
        Self {
            id,
            peers,
            election_timeout_ms: DEFAULT_ELECTION_TIMEOUT_MS,
            heartbeat_ms: DEFAULT_HEARTBEAT_MS,
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum RaftError {
    #[error("not the leader (last known leader: {hint:?})")]
    NotLeader { hint: Option<NodeId> },
    #[error("storage: {0}")]
    Storage(#[from] io::Error),
}

#[derive(Debug)]
struct Progress {
    next_index: u64,
    match_index: u64,
}

pub struct RaftNode<S: Storage> {
    config: RaftConfig,
    storage: S,
    rng: ChaCha8Rng,
    role: Role,
    term: u64,
    voted_for: Option<NodeId>,
    log: Vec<LogEntry>,
    commit_index: u64,
    last_applied: u64,
    leader: Option<NodeId>,
    votes: BTreeSet<NodeId>,
    progress: BTreeMap<NodeId, Progress>,
    election_deadline: u64,
    heartbeat_deadline: u64,
    outbox: Vec<Envelope>,
    log_version: u64,
}

impl<S: Storage> RaftNode<S> {
    /// Restores persisted state from `storage` and starts as a follower.
    pub fn new(config: RaftConfig, mut storage: S, now: u64) -> io::Result<Self> {
        let state = storage.load()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ config.id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut node = Self {
            config,
            storage,
            rng,
            role: Role::Follower,
            term: state.hard.term,
            voted_for: state.hard.voted_for,
            log: state.log,
            commit_index: 0,
            last_applied: 0,
            leader: None,
            votes: BTreeSet::new(),
            progress: BTreeMap::new(),
            election_deadline: 0,
            heartbeat_deadline: 0,
            outbox: Vec::new(),
            log_version: 0,
        };
        node.reset_election_timer(now);
        Ok(node)
    }

    pub fn id(&self) -> NodeId {
        self.config.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn term(&self) -> u64 {
        self.term
    }

    pub fn voted_for(&self) -> Option<NodeId> {
        self.voted_for
    }

    pub fn leader_hint(&self) -> Option<NodeId> {
        match self.role {
            Role::Leader => Some(self.config.id),
            _ => self.leader,
        }
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn last_applied(&self) -> u64 {
        self.last_applied
    }

    pub fn last_index(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn last_term(&self) -> u64 {
        self.log.last().map_or(0, |e| e.term)
    }

    /// Bumped on every change to the log.
    pub fn log_version(&self) -> u64 {
        self.log_version
    }

    pub fn match_index(&self, peer: NodeId) -> Option<u64> {
        self.progress.get(&peer).map(|p| p.match_index)
    }

    pub fn storage(&self) -> &S {
        &self.storage
    }

    /// Hands back the storage, e.g. to restart the node from it.
    pub fn into_storage(self) -> S {
        self.storage
    }

    fn term_at(&self, index: u64) -> Option<u64> {
        match index {
            0 => Some(0),
            i => self.log.get(i as usize - 1).map(|e| e.term),
        }
    }

    fn quorum(&self) -> usize {
        let cluster = self.config.peers.len() + 1;
        cluster / 2 + 1
    }

    /// The earliest time at which `tick` has something to do.
    pub fn next_deadline(&self) -> u64 {
        match self.role {
            Role::Leader => self.heartbeat_deadline,
            _ => self.election_deadline,
        }
    }

    fn reset_election_timer(&mut self, now: u64) {
        let (lo, hi) = self.config.election_timeout_ms;
        self.election_deadline = now + self.rng.gen_range(lo..=hi);
    }

    fn persist_hard_state(&mut self) -> io::Result<()> {
        self.storage.save_hard_state(&HardState { term: self.term, voted_for: self.voted_for })
    }

    fn send(&mut self, to: NodeId, msg: Message) {
        self.outbox.push(Envelope { from: self.config.id, to, msg });
    }

    pub fn take_messages(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    /// Entries newly known committed, in log order. Advances `last_applied`.
    pub fn take_committed(&mut self) -> Vec<LogEntry> {
        let from = self.last_applied as usize;
        let to = self.commit_index as usize;
        self.last_applied = self.commit_index;
        self.log[from..to].to_vec()
    }

    fn become_follower(&mut self, term: u64, now: u64) -> io::Result<()> {
        if term > self.term {
            self.term = term;
            self.voted_for = None;
            self.leader = None;
            self.persist_hard_state()?;
        }
        if self.role != Role::Follower {
            log::debug!("node {} steps down in term {}", self.config.id, self.term);
            self.role = Role::Follower;
            self.progress.clear();
            self.votes.clear();
            self.reset_election_timer(now);
        }
        Ok(())
    }

    pub fn tick(&mut self, now: u64) -> Result<(), RaftError> {
        match self.role {
            Role::Leader => {
                if now >= self.heartbeat_deadline {
                    self.broadcast_append();
                    self.heartbeat_deadline = now + self.config.heartbeat_ms;
                }
            }
            _ => {
                if now >= self.election_deadline {
                    self.start_election(now)?;
                }
            }
        }
        Ok(())
    }

    fn start_election(&mut self, now: u64) -> io::Result<()> {
        self.role = Role::Candidate;
        self.term += 1;
        self.voted_for = Some(self.config.id);
        self.leader = None;
        self.persist_hard_state()?;
        self.votes = BTreeSet::from([self.config.id]);
        self.reset_election_timer(now);
        log::debug!("node {} campaigns in term {}", self.config.id, self.term);
        let msg = Message::VoteRequest { term: self.term, last_log_index: self.last_index(), last_log_term: self.last_term() };
        for peer in self.config.peers.clone() {
            self.send(peer, msg.clone());
        }
        if self.votes.len() >= self.quorum() {
            self.become_leader(now)?;
        }
        Ok(())
    }

    fn become_leader(&mut self, now: u64) -> io::Result<()> {
        log::debug!("node {} leads term {}", self.config.id, self.term);
        self.role = Role::Leader;
        self.leader = Some(self.config.id);
        self.votes.clear();
        let next_index = self.last_index() + 1;
        self.progress = self.config.peers.iter().map(|&p| (p, Progress { next_index, match_index: 0 })).collect();
        // an entry of the new term lets earlier-term entries commit
        self.append_local(Vec::new())?;
        self.broadcast_append();
        self.heartbeat_deadline = now + self.config.heartbeat_ms;
        Ok(())
    }

    fn append_local(&mut self, command: Vec<u8>) -> io::Result<u64> {
        let entry = LogEntry { term: self.term, index: self.last_index() + 1, command };
        self.storage.append(std::slice::from_ref(&entry))?;
        self.log.push(entry);
        self.log_version += 1;
        self.advance_commit();
        Ok(self.last_index())
    }

    /// Appends `command` to the log if this node leads. Returns its
    /// `(index, term)`; the entry is applied only once committed.
    pub fn propose(&mut self, command: Vec<u8>) -> Result<(u64, u64), RaftError> {
        if self.role != Role::Leader {
            return Err(RaftError::NotLeader { hint: self.leader });
        }
        let index = self.append_local(command)?;
        self.broadcast_append();
        Ok((index, self.term))
    }

    fn broadcast_append(&mut self) {
        for peer in self.config.peers.clone() {
            self.send_append(peer);
        }
    }

    fn send_append(&mut self, peer: NodeId) {
        let Some(p) = self.progress.get(&peer) else { return };
        let prev_index = p.next_index - 1;
        let prev_term = self.term_at(prev_index).expect("next_index within log");
        let end = (prev_index as usize + MAX_BATCH).min(self.log.len());
        let entries = self.log[prev_index as usize..end].to_vec();
        let msg = Message::AppendEntries { term: self.term, prev_index, prev_term, leader_commit: self.commit_index, entries };
        self.send(peer, msg);
    }

    fn advance_commit(&mut self) {
        if self.role != Role::Leader {
            return;
        }
        let mut n = self.last_index();
        while n > self.commit_index {
            if self.term_at(n) == Some(self.term) {
                let acks = 1 + self.progress.values().filter(|p| p.match_index >= n).count();
                if acks >= self.quorum() {
                    self.commit_index = n;
                    break;
                }
            } else {
                break;
            }
            n -= 1;
        }
    }

    /// Vote rule: grant iff the candidate's term is current, this node has
    /// not voted for someone else in it, and the candidate's log is at least
    /// as up to date. Returns `(current term, granted)`.
    pub fn handle_vote_request(
        &mut self,
        now: u64,
        term: u64,
        candidate: NodeId,
        last_log: (u64, u64),
    ) -> Result<(u64, bool), RaftError> {
        if term > self.term {
            self.become_follower(term, now)?;
        }
        let (last_term, last_index) = last_log;
        let up_to_date = (last_term, last_index) >= (self.last_term(), self.last_index());
        let free = self.voted_for.is_none_or(|v| v == candidate);
        let granted = term == self.term && free && up_to_date;
        if granted {
            if self.voted_for.is_none() {
                self.voted_for = Some(candidate);
                self.persist_hard_state()?;
            }
            self.reset_election_timer(now);
        }
        Ok((self.term, granted))
    }

    /// Follower side of replication. Returns `(current term, success, match)`
    /// where `match` is the last index known to agree with the leader, or a
    /// retry hint on failure.
    pub fn handle_append_entries(
        &mut self,
        now: u64,
        term: u64,
        leader: NodeId,
        prev: (u64, u64),
        entries: Vec<LogEntry>,
        leader_commit: u64,
    ) -> Result<(u64, bool, u64), RaftError> {
        if term < self.term {
            return Ok((self.term, false, self.last_index()));
        }
        self.become_follower(term, now)?;
        self.leader = Some(leader);
        self.reset_election_timer(now);

        let (prev_term, prev_index) = prev;
        match self.term_at(prev_index) {
            None => return Ok((self.term, false, self.last_index())),
            Some(t) if t != prev_term => {
                return Ok((self.term, false, prev_index - 1));
            }
            Some(_) => {}
        }

        let last_new = prev_index + entries.len() as u64;
        let mut fresh = Vec::new();
        for e in entries {
            if fresh.is_empty() {
                match self.term_at(e.index) {
                    Some(t) if t == e.term => continue,
                    Some(_) => {
                        self.storage.truncate_from(e.index)?;
                        self.log.truncate(e.index as usize - 1);
                        // entries past commit_index only; committed ones never conflict
                        debug_assert!(e.index > self.commit_index);
                    }
                    None => {}
                }
            }
            fresh.push(e);
        }
        if !fresh.is_empty() {
            self.storage.append(&fresh)?;
            self.log.extend(fresh);
            self.log_version += 1;
        }
        self.commit_index = self.commit_index.max(leader_commit.min(last_new));
        Ok((self.term, true, last_new))
    }

    /// Routes one peer message. `ForwardReport` is not a consensus message
    /// and is ignored here.
    pub fn step(&mut self, now: u64, from: NodeId, msg: Message) -> Result<(), RaftError> {
        match msg {
            Message::VoteRequest { term, last_log_index, last_log_term } => {
                let (term, granted) = self.handle_vote_request(now, term, from, (last_log_term, last_log_index))?;
                self.send(from, Message::VoteResponse { term, granted });
            }
            Message::VoteResponse { term, granted } => {
                if term > self.term {
                    self.become_follower(term, now)?;
                } else if term == self.term && self.role == Role::Candidate && granted {
                    self.votes.insert(from);
                    if self.votes.len() >= self.quorum() {
                        self.become_leader(now)?;
                    }
                }
            }
            Message::AppendEntries { term, prev_index, prev_term, leader_commit, entries } => {
                let (term, success, match_index) =
                    self.handle_append_entries(now, term, from, (prev_term, prev_index), entries, leader_commit)?;
                self.send(from, Message::AppendResponse { term, success, match_index });
            }
            Message::AppendResponse { term, success, match_index } => {
                if term > self.term {
                    self.become_follower(term, now)?;
                    return Ok(());
                }
                if term < self.term || self.role != Role::Leader {
                    return Ok(());
                }
                let last = self.last_index();
                let Some(p) = self.progress.get_mut(&from) else { return Ok(()) };
                if success {
                    let m = match_index.min(last);
                    if m > p.match_index {
                        p.match_index = m;
                    }
                    p.next_index = p.next_index.max(p.match_index + 1);
                    self.advance_commit();
                    if self.progress[&from].next_index <= last {
                        self.send_append(from);
                    }
                } else {
                    let retry = (p.next_index - 1).min(match_index + 1).max(p.match_index + 1).max(1);
                    if retry < p.next_index {
                        p.next_index = retry;
                        self.send_append(from);
                    }
                }
            }
            Message::ForwardReport { .. } => {}
        }
        Ok(())
    }
}
