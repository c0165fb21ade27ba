//! Peer links over TCP. Each node dials every peer for its outgoing frames
//! and reads whatever arrives on accepted connections; a connection carries
//! frames in one direction only.

use std::collections::BTreeMap;
use std::io::{BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use rtfeed_raft::{encode_frame, read_frame, Message, NodeId};

use crate::config::Peer;

const OUTBOX_FRAMES: usize = 1024;
const CONNECT_TIMEOUT: Duration = Duration::from_millis(200);
const RECONNECT_BACKOFF: Duration = Duration::from_millis(100);
const POLL: Duration = Duration::from_millis(50);

pub type Inbound = Arc<dyn Fn(NodeId, Message) + Send + Sync>;

pub struct PeerTransport {
    id: NodeId,
    outboxes: BTreeMap<NodeId, SyncSender<Vec<u8>>>,
    accepted: Arc<Mutex<Vec<TcpStream>>>,
}

impl PeerTransport {
    /// Starts the accept loop on `listener` and one writer per peer.
    pub fn start(
        id: NodeId,
        peers: &[Peer],
        listener: TcpListener,
        inbound: Inbound,
        shutdown: Arc<AtomicBool>,
    ) -> std::io::Result<(Self, Vec<JoinHandle<()>>)> {
        listener.set_nonblocking(true)?;
        let accepted = Arc::new(Mutex::new(Vec::new()));
        let mut threads = Vec::new();
        {
            let accepted = accepted.clone();
            let shutdown = shutdown.clone();
            threads.push(thread::Builder::new().name(format!("peer-accept-{id}")).spawn(move || {
                accept_loop(listener, inbound, accepted, shutdown)
            })?);
        }
        let mut outboxes = BTreeMap::new();
        for peer in peers {
            let (tx, rx) = sync_channel(OUTBOX_FRAMES);
            outboxes.insert(peer.id, tx);
            let (addr, shutdown) = (peer.addr, shutdown.clone());
            threads.push(thread::Builder::new().name(format!("peer-{id}-to-{}", peer.id)).spawn(move || {
                writer_loop(addr, rx, shutdown)
            })?);
        }
        Ok((Self { id, outboxes, accepted }, threads))
    }

    /// Queues `msg` for `to`. Best effort: dropped if the peer is unknown,
    /// its outbox is full, or the link is down.
    pub fn send(&self, to: NodeId, msg: &Message) {
        let Some(tx) = self.outboxes.get(&to) else {
            log::warn!("no link to node {to}");
            return;
        };
        match tx.try_send(encode_frame(self.id, msg)) {
            Ok(()) | Err(TrySendError::Disconnected(_)) => {}
            Err(TrySendError::Full(_)) => log::debug!("outbox to node {to} full, dropping frame"),
        }
    }

    /// Closes accepted connections so their reader threads finish.
    pub fn close(&self) {
        for s in self.accepted.lock().unwrap().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn accept_loop(listener: TcpListener, inbound: Inbound, accepted: Arc<Mutex<Vec<TcpStream>>>, shutdown: Arc<AtomicBool>) {
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, from)) => {
                let _ = stream.set_nonblocking(false);
                if let Ok(clone) = stream.try_clone() {
                    accepted.lock().unwrap().push(clone);
                }
                let inbound = inbound.clone();
                let spawned = thread::Builder::new().name(format!("peer-read-{from}")).spawn(move || reader_loop(stream, from, inbound));
                if let Err(e) = spawned {
                    log::error!("cannot start reader for {from}: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(POLL / 5),
            Err(e) => {
                log::warn!("peer accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn reader_loop(stream: TcpStream, from: SocketAddr, inbound: Inbound) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some((id, msg))) => inbound(id, msg),
            Ok(None) => break,
            Err(e) => {
                log::debug!("peer connection from {from} closed: {e}");
                break;
            }
        }
    }
}

fn writer_loop(addr: SocketAddr, rx: Receiver<Vec<u8>>, shutdown: Arc<AtomicBool>) {
    let mut stream: Option<TcpStream> = None;
    let mut next_attempt = Instant::now();
    while !shutdown.load(Ordering::Relaxed) {
        let frame = match rx.recv_timeout(POLL) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if stream.is_none() && Instant::now() >= next_attempt {
            match TcpStream::connect_timeout(&addr, CONNECT_TIMEOUT) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    let _ = s.set_write_timeout(Some(Duration::from_secs(1)));
                    stream = Some(s);
                }
                Err(e) => {
                    log::debug!("cannot reach peer {addr}: {e}");
                    next_attempt = Instant::now() + RECONNECT_BACKOFF;
                }
            }
        }
        if let Some(s) = stream.as_mut() {
            if let Err(e) = s.write_all(&frame) {
                log::debug!("link to {addr} failed: {e}");
                stream = None;
                next_attempt = Instant::now() + RECONNECT_BACKOFF;
            }
        }
    }
    if let Some(s) = stream {
        let _ = s.shutdown(std::net::Shutdown::Both);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc::channel;

    #[test]
    fn frames_cross_a_real_socket_pair() {
        let (la, lb) = (TcpListener::bind("127.0.0.1:0").unwrap(), TcpListener::bind("127.0.0.1:0").unwrap());
        let (addr_a, addr_b) = (la.local_addr().unwrap(), lb.local_addr().unwrap());
        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = channel();
        let tx = Mutex::new(tx);
        let sink: Inbound = Arc::new(move |from, msg| tx.lock().unwrap().send((from, msg)).unwrap());
        let ignore: Inbound = Arc::new(|_, _| {});
        let (a, mut threads) = PeerTransport::start(1, &[Peer { id: 2, addr: addr_b }], la, ignore, shutdown.clone()).unwrap();
        let (b, more) = PeerTransport::start(2, &[Peer { id: 1, addr: addr_a }], lb, sink, shutdown.clone()).unwrap();
        threads.extend(more);

        let msgs = [
            Message::VoteRequest { term: 3, last_log_index: 9, last_log_term: 2 },
            Message::ForwardReport { report: vec![7; 28] },
        ];
        for m in &msgs {
            a.send(2, m);
        }
        a.send(99, &msgs[0]);
        for m in msgs {
            assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), (1, m));
        }
        shutdown.store(true, Ordering::Relaxed);
        a.close();
        b.close();
        for t in threads {
            t.join().unwrap();
        }
    }
}
