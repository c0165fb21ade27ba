//! Test support: the small GTFS fixture, brute-force oracles, seeded random
//! scenario generators, and an independent GTFS-RT decoder.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::time::Duration;

pub mod live;
pub mod oracle;
pub mod random;

pub use gtfs_realtime as rt;

/// Directory of the 3-trip, 5-stop fixture. Also contains `vehicles.csv`
/// and `expected.txt`.
pub fn small_fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/small")
}

/// Decodes a feed with the published GTFS-realtime bindings.
pub fn decode_feed(bytes: &[u8]) -> Result<rt::FeedMessage, prost::DecodeError> {
    prost::Message::decode(bytes)
}

/// Minimal blocking HTTP/1.0 GET. Returns `(status, body)`.
pub fn http_get(addr: SocketAddr, path: &str) -> std::io::Result<(u16, Vec<u8>)> {
    http_request(addr, "GET", path)
}

/// Bodyless HTTP/1.0 request. Returns `(status, body)`.
pub fn http_request(addr: SocketAddr, method: &str, path: &str) -> std::io::Result<(u16, Vec<u8>)> {
    let mut stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    write!(stream, "{method} {path} HTTP/1.0\r\nHost: {addr}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n")?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| std::io::Error::other("no header terminator"))?;
    let head = String::from_utf8_lossy(&raw[..split]);
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| std::io::Error::other("bad status line"))?;
    Ok((status, raw[split + 4..].to_vec()))
}
