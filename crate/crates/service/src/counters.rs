use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use rtfeed_core::wire::{RejectReason, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reject {
    WrongLength,
    InvalidField,
    Gate(RejectReason),
}

impl Reject {
    pub fn from_wire(e: &WireError) -> Self {
        match e {
            WireError::WrongLength(_) => Reject::WrongLength,
            WireError::InvalidField(_) | WireError::InvalidReport(_) => Reject::InvalidField,
        }
    }
}

/// Ingest and pipeline counters, readable while the service runs.
#[derive(Debug, Default)]
pub struct Counters {
    datagrams_received: AtomicU64,
    accepted: AtomicU64,
    wrong_length: AtomicU64,
    invalid_field: AtomicU64,
    stale_timestamp: AtomicU64,
    future_timestamp: AtomicU64,
    implausible_speed: AtomicU64,
    applied: AtomicU64,
    forwarded: AtomicU64,
    socket_errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub datagrams_received: u64,
    pub accepted: u64,
    pub wrong_length: u64,
    pub invalid_field: u64,
    pub stale_timestamp: u64,
    pub future_timestamp: u64,
    pub implausible_speed: u64,
    /// Reports applied to the feed, locally or on commit. A report older
    /// than the vehicle's current entity still counts.
    pub applied: u64,
    /// Reports handed to the leader by this follower.
    pub forwarded: u64,
    pub socket_errors: u64,
    pub queue_dropped: u64,
}

impl CounterSnapshot {
    pub fn rejected(&self) -> u64 {
        self.wrong_length + self.invalid_field + self.stale_timestamp + self.future_timestamp + self.implausible_speed
    }

    /// Every datagram is either accepted or rejected for exactly one reason.
    pub fn conserved(&self) -> bool {
        self.datagrams_received == self.accepted + self.rejected()
    }
}

impl fmt::Display for CounterSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "datagrams_received {}", self.datagrams_received)?;
        writeln!(f, "accepted {}", self.accepted)?;
        writeln!(f, "rejected.wrong_length {}", self.wrong_length)?;
        writeln!(f, "rejected.invalid_field {}", self.invalid_field)?;
        writeln!(f, "rejected.stale_timestamp {}", self.stale_timestamp)?;
        writeln!(f, "rejected.future_timestamp {}", self.future_timestamp)?;
        writeln!(f, "rejected.implausible_speed {}", self.implausible_speed)?;
        writeln!(f, "applied {}", self.applied)?;
        writeln!(f, "forwarded {}", self.forwarded)?;
        writeln!(f, "socket_errors {}", self.socket_errors)?;
        writeln!(f, "queue_dropped {}", self.queue_dropped)
    }
}

impl Counters {
    /// Counts one datagram: `None` for accepted, else its reject reason.
    pub fn datagram(&self, outcome: Option<Reject>) {
        let slot = match outcome {
            None => &self.accepted,
            Some(Reject::WrongLength) => &self.wrong_length,
            Some(Reject::InvalidField) => &self.invalid_field,
            Some(Reject::Gate(RejectReason::StaleTimestamp)) => &self.stale_timestamp,
            Some(Reject::Gate(RejectReason::FutureTimestamp)) => &self.future_timestamp,
            Some(Reject::Gate(RejectReason::ImplausibleSpeed)) => &self.implausible_speed,
        };
        slot.fetch_add(1, Ordering::Relaxed);
        self.datagrams_received.fetch_add(1, Ordering::Release);
    }

    pub fn applied(&self, n: u64) {
        self.applied.fetch_add(n, Ordering::Relaxed);
    }

    pub fn forwarded(&self) {
        self.forwarded.fetch_add(1, Ordering::Relaxed);
    }

    pub fn socket_error(&self) {
        self.socket_errors.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self, queue_dropped: u64) -> CounterSnapshot {
        let r = |a: &AtomicU64| a.load(Ordering::Acquire);
        CounterSnapshot {
            datagrams_received: r(&self.datagrams_received),
            accepted: r(&self.accepted),
            wrong_length: r(&self.wrong_length),
            invalid_field: r(&self.invalid_field),
            stale_timestamp: r(&self.stale_timestamp),
            future_timestamp: r(&self.future_timestamp),
            implausible_speed: r(&self.implausible_speed),
            applied: r(&self.applied),
            forwarded: r(&self.forwarded),
            socket_errors: r(&self.socket_errors),
            queue_dropped,
        }
    }
}
