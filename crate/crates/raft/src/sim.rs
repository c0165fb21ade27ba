//! Deterministic cluster simulation: virtual clock, seeded message latency
//! and election timeouts, scripted faults, and safety checks on every step.
//!
//! Script format, one item per line, `#` starts a comment:
//!
//! ```text
//! nodes 3                 # header: cluster size (ids 1..=n)
//! seed 42                 # header: optional, default 0
//! <ms> propose <vehicle> <lat> <lon> <bearing> <speed_kmh> <timestamp>
//! <ms> propose-to <node> <vehicle> <lat> <lon> <bearing> <speed_kmh> <timestamp>
//! <ms> crash <node>
//! <ms> restart <node>
//! <ms> partition <ids,...> <ids,...> [...]
//! <ms> heal
//! <ms> drop <from> <to>
//! <ms> delay <from> <to> <extra-ms>
//! <ms> restore <from> <to>
//! <ms> loss <probability>
//! <ms> digest
//! <ms> end
//! ```
//!
//! `propose` hands the report to whichever live node currently leads,
//! retrying every 20 ms while there is none. `propose-to` asks one node and
//! follows a single NotLeader redirect. `drop`/`delay` act on one direction
//! of a link until `restore`. Events at equal times run in script order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use rtfeed_core::feed::encode_feed;
use rtfeed_core::matcher::Schedule;
use rtfeed_core::vehicles::VehicleMap;
use rtfeed_core::wire::{encode_packet, PositionReport};

use crate::message::{Envelope, LogEntry, NodeId};
use crate::node::{RaftConfig, RaftError, RaftNode, Role};
use crate::state_machine::FeedStateMachine;
use crate::storage::MemStorage;

/// One-way latency before link delays, drawn uniformly per message.
pub const LATENCY_MS: (u64, u64) = (1, 10);
pub const CLIENT_RETRY_MS: u64 = 20;
/// Default run length when the script has no `end`.
pub const DEFAULT_END_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Propose { report: PositionReport },
    ProposeTo { node: NodeId, report: PositionReport },
    Crash(NodeId),
    Restart(NodeId),
    Partition(Vec<Vec<NodeId>>),
    Heal,
    Drop { from: NodeId, to: NodeId },
    Delay { from: NodeId, to: NodeId, ms: u64 },
    Restore { from: NodeId, to: NodeId },
    Loss(f64),
    Digest,
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: usize,
    pub seed: u64,
    pub events: Vec<(u64, Event)>,
}

#[derive(Debug, Error, PartialEq)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut nodes = None;
        let mut seed = 0;
        let mut events = Vec::new();
        let mut last_time = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ScenarioError { line, message };
            let content = raw.split('#').next().unwrap().trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "nodes" | "seed" => {
                    if !events.is_empty() {
                        return Err(err(format!("`{}` must precede events", words[0])));
                    }
                    let [_, value] = words[..] else {
                        return Err(err(format!("`{}` takes one value", words[0])));
                    };
                    let v: u64 = value.parse().map_err(|_| err(format!("bad number `{value}`")))?;
                    if words[0] == "seed" {
                        seed = v;
                    } else if !(1..=9).contains(&v) {
                        return Err(err("cluster size must be 1..=9".into()));
                    } else {
                        nodes = Some(v as usize);
                    }
                }
                t => {
                    let n = nodes.ok_or_else(|| err("`nodes` header missing".into()))?;
                    let time: u64 = t.parse().map_err(|_| err(format!("expected time or header, got `{t}`")))?;
                    if time < last_time {
                        return Err(err(format!("time {time} goes backwards")));
                    }
                    last_time = time;
                    let ev = parse_event(&words[1..], n).map_err(err)?;
                    events.push((time, ev));
                }
            }
        }
        let nodes = nodes.ok_or(ScenarioError { line: 0, message: "`nodes` header missing".into() })?;
        Ok(Scenario { nodes, seed, events })
    }

    pub fn end_time(&self) -> u64 {
        self.events
            .iter()
            .find(|(_, e)| *e == Event::End)
            .map_or(DEFAULT_END_MS.max(self.events.last().map_or(0, |e| e.0)), |(t, _)| *t)
    }
}

fn parse_event(words: &[&str], nodes: usize) -> Result<Event, String> {
    let Some((&name, args)) = words.split_first() else {
        return Err("missing event".into());
    };
    let node = |s: &str| -> Result<NodeId, String> {
        match s.parse::<NodeId>() {
            Ok(id) if (1..=nodes as u64).contains(&id) => Ok(id),
            _ => Err(format!("`{s}` is not a node id in 1..={nodes}")),
        }
    };
    let arity = |n: usize| -> Result<(), String> {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("`{name}` takes {n} arguments, got {}", args.len()))
        }
    };
    let report = |a: &[&str]| -> Result<PositionReport, String> {
        let f = |i: usize| a[i].parse::<f32>().map_err(|_| format!("bad number `{}`", a[i]));
        let r = PositionReport {
            vehicle_id: a[0].parse().map_err(|_| format!("bad vehicle id `{}`", a[0]))?,
            latitude: f(1)?,
            longitude: f(2)?,
            bearing: f(3)?,
            speed: f(4)?,
            timestamp: a[5].parse().map_err(|_| format!("bad timestamp `{}`", a[5]))?,
        };
        encode_packet(&r).map_err(|e| e.to_string())?;
        Ok(r)
    };
    Ok(match name {
        "propose" => {
            arity(6)?;
            Event::Propose { report: report(args)? }
        }
        "propose-to" => {
            arity(7)?;
            Event::ProposeTo { node: node(args[0])?, report: report(&args[1..])? }
        }
        "crash" => {
            arity(1)?;
            Event::Crash(node(args[0])?)
        }
        "restart" => {
            arity(1)?;
            Event::Restart(node(args[0])?)
        }
        "partition" => {
            if args.len() < 2 {
                return Err("`partition` needs at least two groups".into());
            }
            let mut seen = BTreeSet::new();
            let mut groups = Vec::new();
            for g in args {
                let ids = g.split(',').map(node).collect::<Result<Vec<_>, _>>()?;
                for &id in &ids {
                    if !seen.insert(id) {
                        return Err(format!("node {id} in two groups"));
                    }
                }
                groups.push(ids);
            }
            Event::Partition(groups)
        }
        "heal" => {
            arity(0)?;
            Event::Heal
        }
        "drop" | "restore" => {
            arity(2)?;
            let (from, to) = (node(args[0])?, node(args[1])?);
            if name == "drop" {
                Event::Drop { from, to }
            } else {
                Event::Restore { from, to }
            }
        }
        "delay" => {
            arity(3)?;
            let ms = args[2].parse().map_err(|_| format!("bad delay `{}`", args[2]))?;
            Event::Delay { from: node(args[0])?, to: node(args[1])?, ms }
        }
        "loss" => {
            arity(1)?;
            let p: f64 = args[0].parse().map_err(|_| format!("bad probability `{}`", args[0]))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
            Event::Loss(p)
        }
        "digest" => {
            arity(0)?;
            Event::Digest
        }
        "end" => {
            arity(0)?;
            Event::End
        }
        other => return Err(format!("unknown event `{other}`")),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceKind {
    Role { role: Role, term: u64 },
    Commit { index: u64 },
    Accepted { index: u64, term: u64 },
    Redirect { hint: Option<NodeId> },
    Crash,
    Restart,
    Partition(Vec<Vec<NodeId>>),
    Heal,
    Link { to: NodeId, state: String },
    Digest { digest: u64, applied: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: u64,
    pub node: Option<NodeId>,
    pub kind: TraceKind,
}

#[derive(Debug, Clone)]
pub struct NodeSummary {
    pub id: NodeId,
    pub alive: bool,
    pub role: Role,
    pub term: u64,
    pub commit_index: u64,
    pub last_index: u64,
    pub applied_index: u64,
    /// `encode_feed` of the node's state machine; empty when crashed.
    pub feed: Vec<u8>,
    pub digest: u64,
}

/// Where each proposal ended up: accepted by a leader at `(index, term)`
/// or never accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub command: Vec<u8>,
    pub accepted: Option<(NodeId, u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub seed: u64,
    pub end_time: u64,
    pub events: Vec<TraceEvent>,
    pub violations: Vec<String>,
    pub nodes: Vec<NodeSummary>,
    pub proposals: Vec<Proposal>,
    /// The cluster-wide committed log, as observed by the checker.
    pub committed: Vec<LogEntry>,
    /// Highest term each node led, in order of election.
    pub leaders: BTreeMap<u64, NodeId>,
}

impl Trace {
    /// True if `proposal` is committed at the index it was accepted at.
    pub fn is_committed(&self, proposal: &Proposal) -> bool {
        proposal.accepted.is_some_and(|(_, index, term)| {
            self.committed
                .get(index as usize - 1)
                .is_some_and(|e| e.term == term && e.command == proposal.command)
        })
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = &NodeSummary> {
        self.nodes.iter().filter(|n| n.alive)
    }

    /// All live nodes serve byte-identical feeds.
    pub fn feeds_converged(&self) -> bool {
        let mut live = self.live_nodes();
        match live.next() {
            Some(first) => live.all(|n| n.feed == first.feed),
            None => true,
        }
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {} end {}", self.seed, self.end_time)?;
        for e in &self.events {
            write!(f, "{:>7} ", e.time)?;
            match e.node {
                Some(n) => write!(f, "n{n} ")?,
                None => write!(f, "-- ")?,
            }
            match &e.kind {
                TraceKind::Role { role, term } => writeln!(f, "{role:?} term {term}")?,
                TraceKind::Commit { index } => writeln!(f, "commit {index}")?,
                TraceKind::Accepted { index, term } => writeln!(f, "accepted at {index} term {term}")?,
                TraceKind::Redirect { hint } => writeln!(f, "not leader, hint {hint:?}")?,
                TraceKind::Crash => writeln!(f, "crash")?,
                TraceKind::Restart => writeln!(f, "restart")?,
                TraceKind::Partition(groups) => writeln!(f, "partition {groups:?}")?,
                TraceKind::Heal => writeln!(f, "heal")?,
                TraceKind::Link { to, state } => writeln!(f, "link to n{to} {state}")?,
                TraceKind::Digest { digest, applied } => writeln!(f, "feed {digest:016x} applied {applied}")?,
            }
        }
        for n in &self.nodes {
            writeln!(
                f,
                "node {} {} {:?} term {} commit {} last {} feed {:016x}",
                n.id,
                if n.alive { "up" } else { "down" },
                n.role,
                n.term,
                n.commit_index,
                n.last_index,
                n.digest
            )?;
        }
        for v in &self.violations {
            writeln!(f, "VIOLATION {v}")?;
        }
        Ok(())
    }
}

/// FNV-1a, stable across platforms and releases.
pub fn digest(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Inputs every node's state machine shares.
#[derive(Clone)]
pub struct SimEnv {
    pub schedule: Arc<Schedule>,
    pub vehicles: Arc<VehicleMap>,
}

struct Member {
    node: RaftNode<MemStorage>,
    sm: FeedStateMachine,
    log_version: u64,
    seen: (Role, u64),
    reported_commit: u64,
}

enum Slot {
    Up(Box<Member>),
    Down(MemStorage),
}

struct Checker {
    leaders: BTreeMap<u64, NodeId>,
    committed: Vec<LogEntry>,
    violations: Vec<String>,
}

impl Checker {
    fn violation(&mut self, time: u64, what: String) {
        if self.violations.len() < 100 {
            self.violations.push(format!("t={time}: {what}"));
        }
    }

    /// Entries a node applied must agree with what every other node applied.
    fn applied(&mut self, time: u64, node: NodeId, entries: &[LogEntry]) {
        for e in entries {
            let i = e.index as usize - 1;
            match self.committed.get(i) {
                Some(c) if c == e => {}
                Some(c) => {
                    let c = c.clone();
                    self.violation(time, format!("state machine: node {node} applied {e:?} at {}, others applied {c:?}", e.index));
                }
                None if i == self.committed.len() => self.committed.push(e.clone()),
                None => self.violation(time, format!("node {node} applied index {} past a gap", e.index)),
            }
        }
    }

    fn elected(&mut self, time: u64, node: NodeId, term: u64, log: &[LogEntry]) {
        if let Some(&other) = self.leaders.get(&term) {
            if other != node {
                self.violation(time, format!("election safety: nodes {other} and {node} both lead term {term}"));
            }
            return;
        }
        self.leaders.insert(term, node);
        let missing = self.committed.iter().find(|c| log.get(c.index as usize - 1) != Some(c));
        if let Some(c) = missing {
            let index = c.index;
            self.violation(time, format!("leader completeness: leader {node} of term {term} lacks committed entry {index}"));
        }
    }

    fn log_matching(&mut self, time: u64, logs: &[(NodeId, &[LogEntry])]) {
        for (i, (a, la)) in logs.iter().enumerate() {
            for (b, lb) in &logs[i + 1..] {
                let n = la.len().min(lb.len());
                // highest index holding the same term in both logs
                if let Some(top) = (0..n).rev().find(|&k| la[k].term == lb[k].term) {
                    if la[..=top] != lb[..=top] {
                        let k = (0..=top).find(|&k| la[k] != lb[k]).unwrap();
                        self.violation(
                            time,
                            format!("log matching: nodes {a} and {b} agree on index {} but differ at {}", top + 1, k + 1),
                        );
                    }
                }
            }
        }
    }
}

struct Network {
    rng: ChaCha8Rng,
    seq: u64,
    in_flight: BinaryHeap<Reverse<(u64, u64)>>,
    payloads: HashMap<u64, Envelope>,
    groups: Option<Vec<Vec<NodeId>>>,
    dropped: BTreeSet<(NodeId, NodeId)>,
    delays: BTreeMap<(NodeId, NodeId), u64>,
    loss: f64,
}

impl Network {
    fn connected(&self, from: NodeId, to: NodeId) -> bool {
        if self.dropped.contains(&(from, to)) {
            return false;
        }
        match &self.groups {
            None => true,
            Some(groups) => groups.iter().any(|g| g.contains(&from) && g.contains(&to)),
        }
    }

    fn send(&mut self, now: u64, env: Envelope) {
        // draw before checking so the random stream is independent of faults
        let latency = self.rng.gen_range(LATENCY_MS.0..=LATENCY_MS.1);
        let lost = self.loss > 0.0 && self.rng.gen_bool(self.loss);
        if lost || !self.connected(env.from, env.to) {
            return;
        }
        let at = now + latency + self.delays.get(&(env.from, env.to)).copied().unwrap_or(0);
        self.seq += 1;
        self.in_flight.push(Reverse((at, self.seq)));
        self.payloads.insert(self.seq, env);
    }

    fn next_time(&self) -> Option<u64> {
        self.in_flight.peek().map(|Reverse((t, _))| *t)
    }

    fn due(&mut self, now: u64) -> Vec<Envelope> {
        let mut out = Vec::new();
        while let Some(&Reverse((t, seq))) = self.in_flight.peek() {
            if t > now {
                break;
            }
            self.in_flight.pop();
            let env = self.payloads.remove(&seq).unwrap();
            if self.connected(env.from, env.to) {
                out.push(env);
            }
        }
        out
    }
}

struct Cluster {
    env: SimEnv,
    size: usize,
    seed: u64,
    now: u64,
    slots: BTreeMap<NodeId, Slot>,
    net: Network,
    check: Checker,
    events: Vec<TraceEvent>,
    pending: Vec<usize>,
    proposals: Vec<Proposal>,
    next_retry: Option<u64>,
}

impl Cluster {
    fn new(scenario: &Scenario, env: SimEnv) -> Self {
        let ids: Vec<NodeId> = (1..=scenario.nodes as u64).collect();
        let mut cluster = Cluster {
            env,
            size: scenario.nodes,
            seed: scenario.seed,
            now: 0,
            slots: BTreeMap::new(),
            net: Network {
                rng: ChaCha8Rng::seed_from_u64(scenario.seed),
                seq: 0,
                in_flight: BinaryHeap::new(),
                payloads: HashMap::new(),
                groups: None,
                dropped: BTreeSet::new(),
                delays: BTreeMap::new(),
                loss: 0.0,
            },
            check: Checker { leaders: BTreeMap::new(), committed: Vec::new(), violations: Vec::new() },
            events: Vec::new(),
            pending: Vec::new(),
            proposals: Vec::new(),
            next_retry: None,
        };
        for &id in &ids {
            cluster.start(id, MemStorage::new());
        }
        cluster
    }

    fn start(&mut self, id: NodeId, storage: MemStorage) {
        let peers = (1..=self.size as u64).filter(|&p| p != id).collect();
        let node = RaftNode::new(RaftConfig::new(id, peers, self.seed), storage, self.now).expect("memory storage");
        let sm = FeedStateMachine::new(self.env.schedule.clone(), self.env.vehicles.clone());
        let seen = (node.role(), node.term());
        self.slots.insert(id, Slot::Up(Box::new(Member { node, sm, log_version: u64::MAX, seen, reported_commit: 0 })));
    }

    fn record(&mut self, node: Option<NodeId>, kind: TraceKind) {
        self.events.push(TraceEvent { time: self.now, node, kind });
    }

    fn member(&mut self, id: NodeId) -> Option<&mut Member> {
        match self.slots.get_mut(&id) {
            Some(Slot::Up(m)) => Some(m),
            _ => None,
        }
    }

    fn current_leader(&self) -> Option<NodeId> {
        self.slots
            .iter()
            .filter_map(|(&id, s)| match s {
                Slot::Up(m) if m.node.role() == Role::Leader => Some((m.node.term(), Reverse(id))),
                _ => None,
            })
            .max()
            .map(|(_, Reverse(id))| id)
    }

    fn try_propose(&mut self, id: NodeId, p: usize) -> Result<(), Option<NodeId>> {
        let command = self.proposals[p].command.clone();
        let Some(m) = self.member(id) else { return Err(None) };
        match m.node.propose(command) {
            Ok((index, term)) => {
                self.proposals[p].accepted = Some((id, index, term));
                self.record(Some(id), TraceKind::Accepted { index, term });
                Ok(())
            }
            Err(RaftError::NotLeader { hint }) => Err(hint),
            Err(e) => panic!("memory storage failed: {e}"),
        }
    }

    fn retry_pending(&mut self) {
        if let Some(leader) = self.current_leader() {
            for p in std::mem::take(&mut self.pending) {
                if self.try_propose(leader, p).is_err() {
                    self.pending.push(p);
                }
            }
        }
        self.next_retry = (!self.pending.is_empty()).then_some(self.now + CLIENT_RETRY_MS);
    }

    fn run_event(&mut self, ev: &Event) {
        match ev {
            Event::Propose { report } => {
                self.proposals.push(Proposal { command: encode_packet(report).unwrap().to_vec(), accepted: None });
                self.pending.push(self.proposals.len() - 1);
                self.retry_pending();
            }
            Event::ProposeTo { node, report } => {
                self.proposals.push(Proposal { command: encode_packet(report).unwrap().to_vec(), accepted: None });
                let p = self.proposals.len() - 1;
                if let Err(hint) = self.try_propose(*node, p) {
                    self.record(Some(*node), TraceKind::Redirect { hint });
                    let redirected = hint.is_some_and(|h| self.try_propose(h, p).is_ok());
                    if !redirected {
                        self.pending.push(p);
                        self.next_retry.get_or_insert(self.now + CLIENT_RETRY_MS);
                    }
                }
            }
            Event::Crash(id) => {
                if let Some(Slot::Up(_)) = self.slots.get(id) {
                    let Some(Slot::Up(m)) = self.slots.remove(id) else { unreachable!() };
                    self.slots.insert(*id, Slot::Down(m.node.into_storage()));
                    self.record(Some(*id), TraceKind::Crash);
                }
            }
            Event::Restart(id) => {
                if let Some(Slot::Down(_)) = self.slots.get(id) {
                    let Some(Slot::Down(storage)) = self.slots.remove(id) else { unreachable!() };
                    self.start(*id, storage);
                    self.record(Some(*id), TraceKind::Restart);
                }
            }
            Event::Partition(groups) => {
                self.net.groups = Some(groups.clone());
                self.record(None, TraceKind::Partition(groups.clone()));
            }
            Event::Heal => {
                self.net.groups = None;
                self.record(None, TraceKind::Heal);
            }
            Event::Drop { from, to } => {
                self.net.dropped.insert((*from, *to));
                self.record(Some(*from), TraceKind::Link { to: *to, state: "dropped".into() });
            }
            Event::Delay { from, to, ms } => {
                self.net.delays.insert((*from, *to), *ms);
                self.record(Some(*from), TraceKind::Link { to: *to, state: format!("delayed {ms} ms") });
            }
            Event::Restore { from, to } => {
                self.net.dropped.remove(&(*from, *to));
                self.net.delays.remove(&(*from, *to));
                self.record(Some(*from), TraceKind::Link { to: *to, state: "restored".into() });
            }
            Event::Loss(p) => self.net.loss = *p,
            Event::Digest => {
                let ids: Vec<NodeId> = self.slots.keys().copied().collect();
                for id in ids {
                    if let Some(m) = self.member(id) {
                        let kind = TraceKind::Digest { digest: digest(&encode_feed(m.sm.feed())), applied: m.sm.applied_index() };
                        self.record(Some(id), kind);
                    }
                }
            }
            Event::End => {}
        }
    }

    /// Sends outboxes, applies commits, records role changes, and runs the
    /// safety checks.
    fn settle(&mut self) {
        let ids: Vec<NodeId> = self.slots.keys().copied().collect();
        let mut logs_changed = false;
        for id in ids {
            let now = self.now;
            let Some(Slot::Up(m)) = self.slots.get_mut(&id) else { continue };
            let out = m.node.take_messages();
            let entries = m.node.take_committed();
            for e in &entries {
                m.sm.apply(e);
            }
            let role = (m.node.role(), m.node.term());
            let role_changed = role != m.seen;
            m.seen = role;
            let commit = m.node.commit_index();
            let commit_changed = commit > m.reported_commit;
            m.reported_commit = m.reported_commit.max(commit);
            if m.node.log_version() != m.log_version {
                m.log_version = m.node.log_version();
                logs_changed = true;
            }
            let leader_log = (role.0 == Role::Leader && role_changed).then(|| m.node.log().to_vec());

            for env in out {
                self.net.send(now, env);
            }
            self.check.applied(now, id, &entries);
            if role_changed {
                self.record(Some(id), TraceKind::Role { role: role.0, term: role.1 });
            }
            if let Some(log) = leader_log {
                self.check.elected(now, id, role.1, &log);
            }
            if commit_changed {
                self.record(Some(id), TraceKind::Commit { index: commit });
            }
        }
        if logs_changed {
            let logs: Vec<(NodeId, &[LogEntry])> = self
                .slots
                .iter()
                .map(|(&id, s)| match s {
                    Slot::Up(m) => (id, m.node.log()),
                    Slot::Down(st) => (id, &st.state().log[..]),
                })
                .collect();
            self.check.log_matching(self.now, &logs);
        }
    }

    fn next_wakeup(&self, script: Option<u64>) -> Option<u64> {
        let timers = self.slots.values().filter_map(|s| match s {
            Slot::Up(m) => Some(m.node.next_deadline()),
            Slot::Down(_) => None,
        });
        script.into_iter().chain(self.net.next_time()).chain(self.next_retry).chain(timers).min()
    }

    fn summary(&self) -> Vec<NodeSummary> {
        self.slots
            .iter()
            .map(|(&id, s)| match s {
                Slot::Up(m) => {
                    let feed = encode_feed(m.sm.feed());
                    NodeSummary {
                        id,
                        alive: true,
                        role: m.node.role(),
                        term: m.node.term(),
                        commit_index: m.node.commit_index(),
                        last_index: m.node.last_index(),
                        applied_index: m.sm.applied_index(),
                        digest: digest(&feed),
                        feed,
                    }
                }
                Slot::Down(st) => NodeSummary {
                    id,
                    alive: false,
                    role: Role::Follower,
                    term: st.state().hard.term,
                    commit_index: 0,
                    last_index: st.state().log.len() as u64,
                    applied_index: 0,
                    feed: Vec::new(),
                    digest: 0,
                },
            })
            .collect()
    }
}

/// Runs `scenario` to its `end` (or the default horizon) and returns the
/// trace. Identical inputs give identical traces.
pub fn simulate_cluster(scenario: &Scenario, env: SimEnv) -> Trace {
    let end = scenario.end_time();
    let mut c = Cluster::new(scenario, env);
    let mut script = scenario.events.iter().peekable();
    c.settle();
    while let Some(t) = c.next_wakeup(script.peek().map(|(t, _)| *t)).filter(|&t| t <= end) {
        c.now = t;
        while let Some((_, ev)) = script.next_if(|(et, _)| *et <= t) {
            c.run_event(ev);
            c.settle();
        }
        for env in c.net.due(t) {
            if let Some(m) = c.member(env.to) {
                m.node.step(t, env.from, env.msg).expect("memory storage");
            }
        }
        let ids: Vec<NodeId> = c.slots.keys().copied().collect();
        for id in ids {
            if let Some(m) = c.member(id) {
                m.node.tick(t).expect("memory storage");
            }
        }
        c.settle();
        if c.next_retry.is_some_and(|r| r <= t) {
            c.retry_pending();
            c.settle();
        }
    }
    c.now = end;
    Trace {
        seed: scenario.seed,
        end_time: end,
        nodes: c.summary(),
        events: c.events,
        violations: c.check.violations,
        proposals: c.proposals,
        committed: c.check.committed,
        leaders: c.check.leaders,
    }
}

/// Shape of a generated fault-injection script.
#[derive(Debug, Clone)]
pub struct ChaosPlan {
    pub nodes: usize,
    pub seed: u64,
    /// Faults are injected in `[0, fault_window_ms)`.
    pub fault_window_ms: u64,
    /// Settling time after the window: everything healed and restarted.
    pub quiesce_ms: u64,
    pub crashes: usize,
    pub partitions: usize,
    pub loss: f64,
}

/// Writes a script that proposes `reports` at random times while injecting
/// crashes, partitions and message loss, then heals everything and lets the
/// cluster settle. At most a minority is crashed at any moment.
pub fn chaos_script(plan: &ChaosPlan, reports: &[PositionReport]) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(0x5eed));
    let window = plan.fault_window_ms.max(1);
    let mut lines: Vec<(u64, usize, String)> = Vec::new();
    let mut push = |t: u64, s: String| {
        let n = lines.len();
        lines.push((t, n, s));
    };
    for r in reports {
        let t = rng.gen_range(0..window);
        push(
            t,
            format!(
                "propose {} {} {} {} {} {}",
                r.vehicle_id, r.latitude, r.longitude, r.bearing, r.speed, r.timestamp
            ),
        );
    }
    let ids: Vec<u64> = (1..=plan.nodes as u64).collect();
    let minority = (plan.nodes - 1) / 2;
    // crash intervals, never overlapping more than `minority` at once
    let mut down: Vec<(u64, u64, u64)> = Vec::new();
    for _ in 0..plan.crashes {
        let start = rng.gen_range(0..window);
        let stop = (start + rng.gen_range(100..1_500)).min(window);
        let id = *ids.choose(&mut rng).unwrap();
        let overlapping: Vec<_> = down.iter().filter(|(_, s, e)| *s < stop && start < *e).collect();
        if overlapping.len() >= minority || overlapping.iter().any(|(n, _, _)| *n == id) {
            continue;
        }
        down.push((id, start, stop));
        push(start, format!("crash {id}"));
        push(stop, format!("restart {id}"));
    }
    let mut t = 0;
    for _ in 0..plan.partitions {
        let start = t + rng.gen_range(0..window / (plan.partitions as u64 + 1) + 1);
        let stop = (start + rng.gen_range(200..1_500)).min(window);
        if start >= window {
            break;
        }
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        let cut = rng.gen_range(1..plan.nodes.max(2));
        let fmt = |g: &[u64]| g.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        push(start, format!("partition {} {}", fmt(&shuffled[..cut]), fmt(&shuffled[cut..])));
        push(stop, "heal".into());
        t = stop;
    }
    if plan.loss > 0.0 {
        push(0, format!("loss {}", plan.loss));
        push(window, "loss 0".into());
    }
    push(window, "heal".into());
    for id in &ids {
        push(window, format!("restart {id}"));
    }
    push(window + plan.quiesce_ms, "digest".into());
    push(window + plan.quiesce_ms, "end".into());
    lines.sort();
    let mut out = format!("nodes {}\nseed {}\n", plan.nodes, plan.seed);
    for (t, _, s) in lines {
        out.push_str(&format!("{t} {s}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_event() {
        let s = Scenario::parse(
            "nodes 3\nseed 9\n\
             # comment\n\
             0 propose 7 34.05 -118.25 90 30 1700000000\n\
             5 propose-to 2 7 34.05 -118.25 90 30 1700000001 # trailing\n\
             10 crash 1\n10 restart 1\n20 partition 1 2,3\n30 heal\n\
             40 drop 1 2\n40 delay 2 3 50\n50 restore 1 2\n60 loss 0.1\n70 digest\n80 end\n",
        )
        .unwrap();
        assert_eq!(s.nodes, 3);
        assert_eq!(s.seed, 9);
        assert_eq!(s.events.len(), 12);
        assert_eq!(s.events[4], (20, Event::Partition(vec![vec![1], vec![2, 3]])));
        assert_eq!(s.end_time(), 80);
    }

    #[test]
    fn rejects_malformed_scripts() {
        let bad = [
            ("0 crash 1\n", 1, "header"),
            ("nodes 3\n0 crash 4\n", 2, "node id"),
            ("nodes 3\n10 heal\n5 heal\n", 3, "backwards"),
            ("nodes 3\n0 explode\n", 2, "unknown event"),
            ("nodes 3\n0 partition 1,2\n", 2, "two groups"),
            ("nodes 3\n0 partition 1,2 2,3\n", 2, "two groups"),
            ("nodes 3\n0 propose 7 200 0 0 0 1\n", 2, "latitude"),
            ("nodes 3\n0 propose 7 34 -118 0 0\n", 2, "arguments"),
            ("nodes 3\n0 loss 1.5\n", 2, "probability"),
            ("nodes 3\n0 heal\nseed 4\n", 3, "precede"),
            ("nodes 0\n", 1, "cluster size"),
            ("seed 1\n", 0, "header"),
        ];
        for (text, line, needle) in bad {
            let e = Scenario::parse(text).unwrap_err();
            assert_eq!(e.line, line, "{text:?}: {e}");
            assert!(e.message.contains(needle), "{text:?}: {e}");
        }
    }

    fn e(term: u64, index: u64, c: u8) -> LogEntry {
        LogEntry { term, index, command: vec![c] }
    }

    fn checker() -> Checker {
        Checker { leaders: BTreeMap::new(), committed: Vec::new(), violations: Vec::new() }
    }

    #[test]
    fn checker_flags_two_leaders_in_a_term() {
        let mut c = checker();
        c.elected(0, 1, 3, &[]);
        c.elected(1, 1, 3, &[]);
        assert!(c.violations.is_empty());
        c.elected(2, 2, 3, &[]);
        assert!(c.violations[0].contains("election safety"));
    }

    #[test]
    fn checker_flags_divergent_prefix() {
        let mut c = checker();
        let a = [e(1, 1, 0), e(2, 2, 0), e(3, 3, 0)];
        let fine = [e(1, 1, 0), e(2, 2, 0), e(4, 3, 0)];
        c.log_matching(0, &[(1, &a), (2, &fine)]);
        assert!(c.violations.is_empty());
        let bad = [e(1, 1, 9), e(2, 2, 0)];
        c.log_matching(0, &[(1, &a), (2, &bad)]);
        assert!(c.violations[0].contains("differ at 1"), "{:?}", c.violations);
    }

    #[test]
    fn checker_flags_conflicting_applies_and_incomplete_leaders() {
        let mut c = checker();
        c.applied(0, 1, &[e(1, 1, 0), e(1, 2, 5)]);
        c.applied(0, 2, &[e(1, 1, 0)]);
        assert!(c.violations.is_empty());
        c.applied(0, 3, &[e(1, 1, 0), e(1, 2, 6)]);
        assert!(c.violations[0].contains("state machine"));
        c.elected(0, 3, 2, &[e(1, 1, 0)]);
        assert!(c.violations[1].contains("leader completeness"));
    }

    #[test]
    fn digest_is_fnv1a() {
        assert_eq!(digest(b""), 0xcbf29ce484222325);
        assert_eq!(digest(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn chaos_scripts_parse() {
        let r = PositionReport { latitude: 34.05, longitude: -118.25, bearing: 0.0, speed: 0.0, vehicle_id: 7, timestamp: 1 };
        for seed in 0..20 {
            for nodes in [3, 5] {
                let plan = ChaosPlan { nodes, seed, fault_window_ms: 3_000, quiesce_ms: 1_500, crashes: 4, partitions: 2, loss: 0.05 };
                let text = chaos_script(&plan, &[r; 5]);
                let s = Scenario::parse(&text).unwrap();
                assert_eq!(s.end_time(), 4_500);
            }
        }
    }
}
