//! Durable node state: current term, vote, and the log.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use crate::message::{LogEntry, NodeId};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HardState {
    pub term: u64,
    pub voted_for: Option<NodeId>,
}

/// Everything a node reloads on restart.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PersistentState {
    pub hard: HardState,
    pub log: Vec<LogEntry>,
}

/// Writes must be durable before the call returns; the node acknowledges
/// peers only afterwards.
pub trait Storage {
    fn load(&mut self) -> io::Result<PersistentState>;
    fn save_hard_state(&mut self, hard: &HardState) -> io::Result<()>;
    /// Appends entries whose indexes continue the stored log.
    fn append(&mut self, entries: &[LogEntry]) -> io::Result<()>;
    /// Drops every entry with `index >= from`.
    fn truncate_from(&mut self, from: u64) -> io::Result<()>;
}

#[derive(Debug, Clone, Default)]
pub struct MemStorage {
    state: PersistentState,
}

impl MemStorage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &PersistentState {
        &self.state
    }
}

impl Storage for MemStorage {
    fn load(&mut self) -> io::Result<PersistentState> {
        Ok(self.state.clone())
    }

    fn save_hard_state(&mut self, hard: &HardState) -> io::Result<()> {
        self.state.hard = hard.clone();
        Ok(())
    }

    fn append(&mut self, entries: &[LogEntry]) -> io::Result<()> {
        self.state.log.extend_from_slice(entries);
        Ok(())
    }

    fn truncate_from(&mut self, from: u64) -> io::Result<()> {
        self.state.log.truncate(from.saturating_sub(1) as usize);
        Ok(())
    }
}

const REC_HARD: u8 = 1;
const REC_APPEND: u8 = 2;
const REC_TRUNCATE: u8 = 3;
const NO_VOTE: u64 = u64::MAX;

/// Append-only record file. Records:
///
/// - `1, term u64, voted_for u64` (`u64::MAX` = none)
/// - `2, term u64, index u64, len u32, command`
/// - `3, from u64`
///
/// A torn record at the tail (crash mid-write) is discarded on open.
#[derive(Debug)]
pub struct FileStorage {
    path: PathBuf,
    file: File,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).read(true).append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn write_record(&mut self, rec: &[u8]) -> io::Result<()> {
        self.file.write_all(rec)?;
        self.file.sync_data()
    }
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_be_bytes(b))
}

fn replay(r: &mut impl Read) -> io::Result<(PersistentState, u64)> {
    let mut state = PersistentState::default();
    let mut good = 0u64;
    loop {
        let mut tag = [0u8; 1];
        if r.read(&mut tag)? == 0 {
            break;
        }
        let rec: io::Result<u64> = (|| match tag[0] {
            REC_HARD => {
                let term = read_u64(r)?;
                let vote = read_u64(r)?;
                state.hard = HardState { term, voted_for: (vote != NO_VOTE).then_some(vote) };
                Ok(17)
            }
            REC_APPEND => {
                let term = read_u64(r)?;
                let index = read_u64(r)?;
                let mut len = [0u8; 4];
                r.read_exact(&mut len)?;
                let mut command = vec![0u8; u32::from_be_bytes(len) as usize];
                r.read_exact(&mut command)?;
                let n = 21 + command.len() as u64;
                if index != state.log.len() as u64 + 1 {
                    return Err(io::Error::new(io::ErrorKind::InvalidData, format!("log record out of order at index {index}")));
                }
                state.log.push(LogEntry { term, index, command });
                Ok(n)
            }
            REC_TRUNCATE => {
                let from = read_u64(r)?;
                state.log.truncate(from.saturating_sub(1) as usize);
                Ok(9)
            }
            other => Err(io::Error::new(io::ErrorKind::InvalidData, format!("unknown record tag {other}"))),
        })();
        match rec {
            Ok(n) => good += n,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e),
        }
    }
    Ok((state, good))
}

impl Storage for FileStorage {
    fn load(&mut self) -> io::Result<PersistentState> {
        let mut reader = BufReader::new(File::open(&self.path)?);
        let (state, good) = replay(&mut reader)?;
        if good < self.file.metadata()?.len() {
            log::warn!("{}: discarding torn record after byte {good}", self.path.display());
            self.file.set_len(good)?;
            self.file.sync_data()?;
        }
        Ok(state)
    }

    fn save_hard_state(&mut self, hard: &HardState) -> io::Result<()> {
        let mut rec = vec![REC_HARD];
        rec.extend(hard.term.to_be_bytes());
        rec.extend(hard.voted_for.unwrap_or(NO_VOTE).to_be_bytes());
        self.write_record(&rec)
    }

    fn append(&mut self, entries: &[LogEntry]) -> io::Result<()> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut rec = Vec::new();
        for e in entries {
            rec.push(REC_APPEND);
            rec.extend(e.term.to_be_bytes());
            rec.extend(e.index.to_be_bytes());
            rec.extend((e.command.len() as u32).to_be_bytes());
            rec.extend(&e.command);
        }
        self.write_record(&rec)
    }

    fn truncate_from(&mut self, from: u64) -> io::Result<()> {
        let mut rec = vec![REC_TRUNCATE];
        rec.extend(from.to_be_bytes());
        self.write_record(&rec)
    }
}
