//! Peer messages and their stream framing.
//!
//! Frame: `u32` big-endian length of everything after it, then a type byte,
//! then the fields in the order listed on each variant. Every message starts
//! with `from: u64` and (except `ForwardReport`) `term: u64`. Entries are
//! `(term: u64, index: u64, length: u32, command bytes)`.

use std::io::{self, Read, Write};

use thiserror::Error;

pub type NodeId = u64;

pub const VOTE_REQUEST: u8 = 1;
pub const VOTE_RESPONSE: u8 = 2;
pub const APPEND_ENTRIES: u8 = 3;
pub const APPEND_RESPONSE: u8 = 4;
pub const FORWARD_REPORT: u8 = 5;

/// Upper bound on a frame, protects readers from hostile lengths.
pub const MAX_FRAME_LEN: u32 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    pub index: u64,
    /// A 28-byte encoded position report, or empty for the leader's no-op.
    pub command: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    /// `term, last_log_index, last_log_term`
    VoteRequest { term: u64, last_log_index: u64, last_log_term: u64 },
    /// `term, granted: u8`
    VoteResponse { term: u64, granted: bool },
    /// `term, prev_index, prev_term, leader_commit, count: u32, entries`
    AppendEntries {
        term: u64,
        prev_index: u64,
        prev_term: u64,
        leader_commit: u64,
        entries: Vec<LogEntry>,
    },
    /// `term, success: u8, match_index`. On failure `match_index` is a hint:
    /// the highest index the follower might share with the leader.
    AppendResponse { term: u64, success: bool, match_index: u64 },
    /// `length: u32, report bytes`. A follower hands an ingested report to
    /// the leader.
    ForwardReport { report: Vec<u8> },
}

impl Message {
    pub fn term(&self) -> Option<u64> {
        match self {
            Message::VoteRequest { term, .. }
            | Message::VoteResponse { term, .. }
            | Message::AppendEntries { term, .. }
            | Message::AppendResponse { term, .. } => Some(*term),
            Message::ForwardReport { .. } => None,
        }
    }

    pub fn kind(&self) -> u8 {
        match self {
            Message::VoteRequest { .. } => VOTE_REQUEST,
            Message::VoteResponse { .. } => VOTE_RESPONSE,
            Message::AppendEntries { .. } => APPEND_ENTRIES,
            Message::AppendResponse { .. } => APPEND_RESPONSE,
            Message::ForwardReport { .. } => FORWARD_REPORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: Message,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("{0} trailing bytes in frame")]
    Trailing(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn put_bytes(buf: &mut Vec<u8>, b: &[u8]) {
    buf.extend_from_slice(&(b.len() as u32).to_be_bytes());
    buf.extend_from_slice(b);
}

/// Encodes `(from, msg)` as one complete frame including the length prefix.
pub fn encode_frame(from: NodeId, msg: &Message) -> Vec<u8> {
    let mut body = vec![msg.kind()];
    put_u64(&mut body, from);
    match msg {
        Message::VoteRequest { term, last_log_index, last_log_term } => {
            put_u64(&mut body, *term);
            put_u64(&mut body, *last_log_index);
            put_u64(&mut body, *last_log_term);
        }
        Message::VoteResponse { term, granted } => {
            put_u64(&mut body, *term);
            body.push(*granted as u8);
        }
        Message::AppendEntries { term, prev_index, prev_term, leader_commit, entries } => {
            put_u64(&mut body, *term);
            put_u64(&mut body, *prev_index);
            put_u64(&mut body, *prev_term);
            put_u64(&mut body, *leader_commit);
            body.extend_from_slice(&(entries.len() as u32).to_be_bytes());
            for e in entries {
                put_u64(&mut body, e.term);
                put_u64(&mut body, e.index);
                put_bytes(&mut body, &e.command);
            }
        }
        Message::AppendResponse { term, success, match_index } => {
            put_u64(&mut body, *term);
            body.push(*success as u8);
            put_u64(&mut body, *match_index);
        }
        Message::ForwardReport { report } => put_bytes(&mut body, report),
    }
    let mut frame = (body.len() as u32).to_be_bytes().to_vec();
    frame.extend(body);
    frame
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], FrameError> {
        if self.0.len() < n {
            return Err(FrameError::Truncated);
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FrameError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<Vec<u8>, FrameError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }
}

/// Decodes a frame body (everything after the length prefix).
pub fn decode_body(body: &[u8]) -> Result<(NodeId, Message), FrameError> {
    let mut c = Cursor(body);
    let kind = c.u8()?;
    let from = c.u64()?;
    let msg = match kind {
        VOTE_REQUEST => Message::VoteRequest { term: c.u64()?, last_log_index: c.u64()?, last_log_term: c.u64()? },
        VOTE_RESPONSE => Message::VoteResponse { term: c.u64()?, granted: c.u8()? != 0 },
        APPEND_ENTRIES => {
            let term = c.u64()?;
            let prev_index = c.u64()?;
            let prev_term = c.u64()?;
            let leader_commit = c.u64()?;
            let count = c.u32()? as usize;
            // each entry needs at least 20 bytes
            if count > c.0.len() / 20 {
                return Err(FrameError::Truncated);
            }
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                entries.push(LogEntry { term: c.u64()?, index: c.u64()?, command: c.bytes()? });
            }
            Message::AppendEntries { term, prev_index, prev_term, leader_commit, entries }
        }
        APPEND_RESPONSE => Message::AppendResponse { term: c.u64()?, success: c.u8()? != 0, match_index: c.u64()? },
        FORWARD_REPORT => Message::ForwardReport { report: c.bytes()? },
        other => return Err(FrameError::UnknownType(other)),
    };
    if !c.0.is_empty() {
        return Err(FrameError::Trailing(c.0.len()));
    }
    Ok((from, msg))
}

pub fn write_frame(w: &mut impl Write, from: NodeId, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(from, msg))
}

/// Reads one frame. `Ok(None)` on clean end of stream.
pub fn read_frame(r: &mut impl Read) -> Result<Option<(NodeId, Message)>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    decode_body(&body).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vote_request_layout() {
        let frame = encode_frame(2, &Message::VoteRequest { term: 3, last_log_index: 4, last_log_term: 1 });
        let mut want = vec![0, 0, 0, 33, VOTE_REQUEST];
        for v in [2u64, 3, 4, 1] {
            want.extend(v.to_be_bytes());
        }
        assert_eq!(frame, want);
    }

    #[test]
    fn entry_layout() {
        let frame = encode_frame(
            1,
            &Message::AppendEntries {
                term: 2,
                prev_index: 0,
                prev_term: 0,
                leader_commit: 0,
                entries: vec![LogEntry { term: 2, index: 1, command: vec![0xaa, 0xbb] }],
            },
        );
        // header(4) + type(1) + from(8) + 4 u64 + count(4) + entry(8+8+4+2)
        assert_eq!(frame.len(), 4 + 1 + 8 + 32 + 4 + 22);
        assert_eq!(&frame[frame.len() - 6..], &[0, 0, 0, 2, 0xaa, 0xbb]);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(decode_body(&[9, 0, 0, 0, 0, 0, 0, 0, 0]), Err(FrameError::UnknownType(9))));
        assert!(matches!(decode_body(&[VOTE_RESPONSE, 0, 0]), Err(FrameError::Truncated)));
        let mut body = encode_frame(1, &Message::VoteResponse { term: 1, granted: true })[4..].to_vec();
        body.push(0);
        assert!(matches!(decode_body(&body), Err(FrameError::Trailing(1))));
        let huge = (MAX_FRAME_LEN + 1).to_be_bytes();
        assert!(matches!(read_frame(&mut &huge[..]), Err(FrameError::TooLarge(_))));
        assert!(read_frame(&mut &[][..]).unwrap().is_none());
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let entry = (any::<u64>(), any::<u64>(), proptest::collection::vec(any::<u8>(), 0..40))
            .prop_map(|(term, index, command)| LogEntry { term, index, command });
        prop_oneof![
            (any::<u64>(), any::<u64>(), any::<u64>())
                .prop_map(|(term, last_log_index, last_log_term)| Message::VoteRequest { term, last_log_index, last_log_term }),
            (any::<u64>(), any::<bool>()).prop_map(|(term, granted)| Message::VoteResponse { term, granted }),
            (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>(), proptest::collection::vec(entry, 0..5)).prop_map(
                |(term, prev_index, prev_term, leader_commit, entries)| Message::AppendEntries {
                    term,
                    prev_index,
                    prev_term,
                    leader_commit,
                    entries
                }
            ),
            (any::<u64>(), any::<bool>(), any::<u64>())
                .prop_map(|(term, success, match_index)| Message::AppendResponse { term, success, match_index }),
            proptest::collection::vec(any::<u8>(), 0..40).prop_map(|report| Message::ForwardReport { report }),
        ]
    }

    proptest! {
        #[test]
        fn frames_round_trip(from in any::<u64>(), msg in arb_message()) {
            let frame = encode_frame(from, &msg);
            prop_assert_eq!(u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize, frame.len() - 4);
            let back = read_frame(&mut &frame[..]).unwrap().unwrap();
            prop_assert_eq!(back, (from, msg));
        }

        #[test]
        fn garbage_never_panics(body in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_body(&body);
        }
    }
}
