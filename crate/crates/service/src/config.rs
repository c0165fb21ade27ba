//! Service configuration: `key = value` lines, `#` comments.
//!
//! Keys: `udp_bind`, `http_bind`, `gtfs_path`, `vehicle_map_path`,
//! `agency_utc_offset` (minutes), `feed_ttl` (seconds), `queue_capacity`,
//! `node_id`, `peers` (comma-separated `id@host:port`), `raft_bind`,
//! `data_dir`, `replication_enabled`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use thiserror::Error;

use rtfeed_core::feed::DEFAULT_FEED_TTL_SECS;
use rtfeed_core::gtfs::UtcOffset;
use rtfeed_raft::NodeId;

pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;
pub const DEFAULT_UDP_BIND: &str = "0.0.0.0:5005";
pub const DEFAULT_HTTP_BIND: &str = "0.0.0.0:8080";

const KEYS: &[&str] = &[
    "udp_bind",
    "http_bind",
    "gtfs_path",
    "vehicle_map_path",
    "agency_utc_offset",
    "feed_ttl",
    "queue_capacity",
    "node_id",
    "peers",
    "raft_bind",
    "data_dir",
    "replication_enabled",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: {message}")]
    Value { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peer {
    pub id: NodeId,
    pub addr: SocketAddr,
}

impl std::str::FromStr for Peer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (id, addr) = s.trim().split_once('@').ok_or_else(|| format!("peer `{s}` is not id@host:port"))?;
        Ok(Peer {
            id: id.parse().map_err(|_| format!("peer id `{id}` is not a number"))?,
            addr: addr.parse().map_err(|_| format!("peer address `{addr}` is not host:port"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub udp_bind: SocketAddr,
    pub http_bind: SocketAddr,
    pub gtfs_path: PathBuf,
    pub vehicle_map_path: PathBuf,
    pub agency_utc_offset: UtcOffset,
    pub feed_ttl: u64,
    pub queue_capacity: usize,
    pub node_id: String,
    pub peers: Vec<Peer>,
    pub replication_enabled: bool,
    /// Where this node accepts peer connections.
    pub raft_bind: Option<SocketAddr>,
    /// Holds the replicated log file; defaults to the working directory.
    pub data_dir: Option<PathBuf>,
}

/// Raw `key = value` pairs. Later insertions win, so CLI flags are applied
/// after the file.
#[derive(Debug, Clone, Default)]
pub struct ConfigPairs(BTreeMap<String, String>);

impl ConfigPairs {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, message: format!("expected key = value, got `{line}`") })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("unknown key `{key}`") });
            }
            if pairs.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ConfigError::Syntax { line: i + 1, message: format!("duplicate key `{key}`") });
            }
        }
        Ok(Self(pairs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) {
            return Err(ConfigError::Invalid(format!("unknown key `{key}`")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse().map_err(|e: T::Err| ConfigError::Value { key: key.into(), message: e.to_string() }))
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| ConfigError::Value { key: key.into(), message: "missing".into() })
    }

    pub fn build(&self) -> Result<ServiceConfig, ConfigError> {
        let offset: i32 = self.get("agency_utc_offset")?.unwrap_or(0);
        let agency_utc_offset = UtcOffset::minutes(offset).ok_or_else(|| ConfigError::Value {
            key: "agency_utc_offset".into(),
            message: format!("{offset} minutes is outside ±{}", UtcOffset::MAX_MINUTES),
        })?;
        let peers = match self.0.get("peers") {
            Some(list) => list
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|p| p.parse().map_err(|message| ConfigError::Value { key: "peers".into(), message }))
                .collect::<Result<Vec<Peer>, _>>()?,
            None => Vec::new(),
        };
        let config = ServiceConfig {
            udp_bind: self.get("udp_bind")?.unwrap_or_else(|| DEFAULT_UDP_BIND.parse().unwrap()),
            http_bind: self.get("http_bind")?.unwrap_or_else(|| DEFAULT_HTTP_BIND.parse().unwrap()),
            gtfs_path: self.required("gtfs_path")?,
            vehicle_map_path: self.required("vehicle_map_path")?,
            agency_utc_offset,
            feed_ttl: self.get("feed_ttl")?.unwrap_or(DEFAULT_FEED_TTL_SECS),
            queue_capacity: self.get("queue_capacity")?.unwrap_or(DEFAULT_QUEUE_CAPACITY),
            node_id: self.get("node_id")?.unwrap_or_else(|| "1".to_string()),
            peers,
            replication_enabled: self.get("replication_enabled")?.unwrap_or(false),
            raft_bind: self.get("raft_bind")?,
            data_dir: self.get("data_dir")?,
        };
        config.validate()?;
        Ok(config)
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let mut ports = vec![("udp_bind", self.udp_bind), ("http_bind", self.http_bind)];
        if let Some(r) = self.raft_bind {
            ports.push(("raft_bind", r));
        }
        for (i, (ka, a)) in ports.iter().enumerate() {
            for (kb, b) in &ports[i + 1..] {
                // port 0 asks the OS for a fresh one
                if a.port() != 0 && a.port() == b.port() {
                    return invalid(format!("{ka} and {kb} share port {}", a.port()));
                }
            }
        }
        if self.queue_capacity == 0 {
            return invalid("queue_capacity must be positive".into());
        }
        if self.node_id.trim().is_empty() {
            return invalid("node_id is empty".into());
        }
        let own: Option<NodeId> = self.node_id.parse().ok();
        for (i, p) in self.peers.iter().enumerate() {
            if Some(p.id) == own || Some(p.addr) == self.raft_bind {
                return invalid(format!("peers include this node ({}@{})", p.id, p.addr));
            }
            if self.peers[..i].iter().any(|q| q.id == p.id) {
                return invalid(format!("peer id {} listed twice", p.id));
            }
        }
        if self.replication_enabled {
            if own.is_none() {
                return invalid(format!("replication needs a numeric node_id, got `{}`", self.node_id));
            }
            if self.raft_bind.is_none() {
                return invalid("replication needs raft_bind".into());
            }
        }
        Ok(())
    }

    pub fn numeric_node_id(&self) -> Option<NodeId> {
        self.node_id.parse().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "gtfs_path = /data/gtfs\nvehicle_map_path = /data/vehicles.csv\n";

    fn build(extra: &str) -> Result<ServiceConfig, ConfigError> {
        ConfigPairs::parse(&format!("{BASE}{extra}"))?.build()
    }

    #[test]
    fn defaults() {
        let c = build("").unwrap();
        assert_eq!(c.udp_bind, DEFAULT_UDP_BIND.parse().unwrap());
        assert_eq!(c.feed_ttl, 900);
        assert_eq!(c.queue_capacity, 4096);
        assert_eq!(c.agency_utc_offset, UtcOffset(0));
        assert!(!c.replication_enabled);
        assert!(c.peers.is_empty());
    }

    #[test]
    fn full_file() {
        let c = build(
            "# cluster member\nudp_bind = 127.0.0.1:6000\nhttp_bind = 127.0.0.1:6001 # trailing\n\
             agency_utc_offset = -480\nfeed_ttl = 60\nnode_id = 2\nraft_bind = 127.0.0.1:6002\n\
             peers = 1@127.0.0.1:7002, 3@127.0.0.1:8002\nreplication_enabled = true\ndata_dir = /tmp/n2\n",
        )
        .unwrap();
        assert_eq!(c.agency_utc_offset, UtcOffset(-480));
        assert_eq!(c.peers, vec![
            Peer { id: 1, addr: "127.0.0.1:7002".parse().unwrap() },
            Peer { id: 3, addr: "127.0.0.1:8002".parse().unwrap() },
        ]);
        assert_eq!(c.numeric_node_id(), Some(2));
        assert_eq!(c.data_dir, Some(PathBuf::from("/tmp/n2")));
    }

    #[test]
    fn later_values_override() {
        let mut pairs = ConfigPairs::parse(BASE).unwrap();
        pairs.set("feed_ttl", "30").unwrap();
        assert_eq!(pairs.build().unwrap().feed_ttl, 30);
        assert!(pairs.set("colour", "blue").is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            ("udp_bind = 127.0.0.1:7000\nhttp_bind = 127.0.0.1:7000\n", "share port"),
            ("agency_utc_offset = 841\n", "outside"),
            ("agency_utc_offset = -900\n", "outside"),
            ("node_id = 1\npeers = 1@127.0.0.1:9000\n", "include this node"),
            ("peers = 2@127.0.0.1:9000,2@127.0.0.1:9001\n", "twice"),
            ("peers = localhost\n", "id@host:port"),
            ("replication_enabled = true\nnode_id = alpha\nraft_bind = 127.0.0.1:9000\n", "numeric"),
            ("replication_enabled = true\n", "raft_bind"),
            ("replication_enabled = yes\n", "replication_enabled"),
            ("feed_ttl = soon\n", "feed_ttl"),
            ("queue_capacity = 0\n", "positive"),
        ];
        for (extra, needle) in cases {
            let e = build(extra).unwrap_err().to_string();
            assert!(e.contains(needle), "{extra:?}: {e}");
        }
        assert!(ConfigPairs::parse("gtfs_path /x\n").is_err());
        assert!(ConfigPairs::parse("colour = blue\n").is_err());
        assert!(ConfigPairs::parse("feed_ttl = 1\nfeed_ttl = 2\n").is_err());
        assert!(ConfigPairs::parse("").unwrap().build().unwrap_err().to_string().contains("gtfs_path"));
    }

    #[test]
    fn ephemeral_ports_may_repeat() {
        assert!(build("udp_bind = 127.0.0.1:0\nhttp_bind = 127.0.0.1:0\n").is_ok());
    }
}
