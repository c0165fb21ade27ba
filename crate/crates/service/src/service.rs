//! Startup and the ingest, analysis and HTTP contexts.

use std::io;
use std::net::{SocketAddr, TcpListener, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tiny_http::{Header, Method, Response, Server};

use rtfeed_core::feed::{encode_feed, render_text, FeedSnapshot};
use rtfeed_core::gtfs::{load_gtfs, GtfsError};
use rtfeed_core::matcher::{match_position, Schedule};
use rtfeed_core::vehicles::{load_vehicle_map, VehicleMap, VehicleMapError};
use rtfeed_core::wire::{decode_packet, validate_report, PositionReport, Verdict};
use rtfeed_raft::{FeedStateMachine, FileStorage, Message, NodeId, RaftConfig, RaftNode};

use crate::config::ServiceConfig;
use crate::counters::{CounterSnapshot, Counters, Reject};
use crate::queue::DropOldestQueue;
use crate::replica::{Replica, ReplicaStatus};
use crate::transport::PeerTransport;

pub const FEED_PATH: &str = "/gtfs-rt/vehicle-positions";
pub const HEALTH_PATH: &str = "/healthz";
pub const DEBUG_PATH: &str = "/debug/feed";
/// POST here re-reads the configured vehicle map.
pub const RELOAD_PATH: &str = "/admin/reload-vehicle-map";

const POLL: Duration = Duration::from_millis(100);
const EVICT_EVERY: Duration = Duration::from_secs(1);
const MAX_DATAGRAM: usize = 65_536;

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot load GTFS from {path}: {source}")]
    Gtfs { path: PathBuf, source: GtfsError },
    #[error("cannot load vehicle map {path}: {source}")]
    VehicleMap { path: PathBuf, source: VehicleMapError },
    #[error("cannot open replication log {path}: {source}")]
    Storage { path: PathBuf, source: io::Error },
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind { what: &'static str, addr: SocketAddr, source: io::Error },
    #[error("cannot start thread: {0}")]
    Thread(io::Error),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Work for the analysis context.
pub enum Input {
    Report(PositionReport),
    Peer(NodeId, Message),
}

pub struct Shared {
    pub(crate) config: ServiceConfig,
    pub(crate) feed: RwLock<Arc<FeedSnapshot>>,
    pub(crate) vehicles: RwLock<Arc<VehicleMap>>,
    pub(crate) schedule: Arc<Schedule>,
    pub(crate) counters: Counters,
    pub(crate) queue: DropOldestQueue<Input>,
    pub(crate) replica: Mutex<Option<ReplicaStatus>>,
    pub(crate) shutdown: AtomicBool,
}

impl Shared {
    pub(crate) fn publish(&self, feed: FeedSnapshot) {
        *self.feed.write().unwrap() = Arc::new(feed);
    }

    fn snapshot(&self) -> Arc<FeedSnapshot> {
        self.feed.read().unwrap().clone()
    }

    fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot(self.queue.dropped())
    }

    fn reload_vehicle_map(&self, path: &Path) -> Result<usize, VehicleMapError> {
        match load_vehicle_map(path) {
            Ok(map) => {
                let n = map.len();
                *self.vehicles.write().unwrap() = Arc::new(map);
                log::info!("reloaded {n} vehicles from {}", path.display());
                Ok(n)
            }
            Err(e) => {
                log::error!("vehicle map reload from {} failed, keeping the old map: {e}", path.display());
                Err(e)
            }
        }
    }
}

/// A running service. Dropping it stops every context.
pub struct ServiceHandle {
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    udp_addr: SocketAddr,
    http_addr: SocketAddr,
    raft_addr: Option<SocketAddr>,
}

impl ServiceHandle {
    pub fn udp_addr(&self) -> SocketAddr {
        self.udp_addr
    }

    pub fn http_addr(&self) -> SocketAddr {
        self.http_addr
    }

    pub fn raft_addr(&self) -> Option<SocketAddr> {
        self.raft_addr
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.shared.counters()
    }

    pub fn feed(&self) -> Arc<FeedSnapshot> {
        self.shared.snapshot()
    }

    pub fn replica_status(&self) -> Option<ReplicaStatus> {
        self.shared.replica.lock().unwrap().clone()
    }

    /// Swaps in the vehicle map at `path`. On error the old map stays.
    pub fn reload_vehicle_map(&self, path: impl AsRef<Path>) -> Result<usize, VehicleMapError> {
        self.shared.reload_vehicle_map(path.as_ref())
    }

    /// Blocks until every context exits (they exit only on shutdown).
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, StartupError> {
    thread::Builder::new().name(name.into()).spawn(f).map_err(StartupError::Thread)
}

/// Loads the schedule and vehicle map, binds every socket, and only then
/// starts the ingest, analysis and HTTP contexts.
pub fn startup(config: ServiceConfig) -> Result<ServiceHandle, StartupError> {
    config.validate()?;
    let gtfs = load_gtfs(&config.gtfs_path).map_err(|source| StartupError::Gtfs { path: config.gtfs_path.clone(), source })?;
    let vehicles = load_vehicle_map(&config.vehicle_map_path)
        .map_err(|source| StartupError::VehicleMap { path: config.vehicle_map_path.clone(), source })?;
    log::info!(
        "loaded {} stops, {} trips, {} vehicles",
        gtfs.stops.len(),
        gtfs.trips.len(),
        vehicles.len()
    );
    let schedule = Arc::new(Schedule::new(gtfs, config.agency_utc_offset));

    let udp = UdpSocket::bind(config.udp_bind).map_err(|source| StartupError::Bind { what: "UDP ingest", addr: config.udp_bind, source })?;
    let udp_addr = udp.local_addr().map_err(StartupError::Thread)?;
    let http = Server::http(config.http_bind).map_err(|e| StartupError::Bind {
        what: "HTTP",
        addr: config.http_bind,
        source: io::Error::other(e.to_string()),
    })?;
    let http_addr = http.server_addr().to_ip().expect("TCP listener");

    let shared = Arc::new(Shared {
        feed: RwLock::new(Arc::new(FeedSnapshot::new(unix_now()))),
        vehicles: RwLock::new(Arc::new(vehicles)),
        schedule,
        counters: Counters::default(),
        queue: DropOldestQueue::new(config.queue_capacity),
        replica: Mutex::new(None),
        shutdown: AtomicBool::new(false),
        config,
    });

    let mut threads = Vec::new();
    let mut raft_addr = None;
    if shared.config.replication_enabled {
        let (replica, addr, peer_threads) = start_replication(&shared).inspect_err(|_| {
            // stops any peer threads that did start
            shared.shutdown.store(true, Ordering::Relaxed);
        })?;
        raft_addr = Some(addr);
        threads.extend(peer_threads);
        threads.push(spawn("analysis", move || replica.run())?);
    } else {
        let s = shared.clone();
        threads.push(spawn("analysis", move || analysis_loop(&s))?);
    }
    let s = shared.clone();
    threads.push(spawn("udp-ingest", move || udp_ingest_loop(&s, udp))?);
    let s = shared.clone();
    threads.push(spawn("http", move || http_loop(&s, http))?);

    log::info!("ingest on udp://{udp_addr}, feed on http://{http_addr}{FEED_PATH}");
    Ok(ServiceHandle { shared, threads, udp_addr, http_addr, raft_addr })
}

fn start_replication(shared: &Arc<Shared>) -> Result<(Replica, SocketAddr, Vec<JoinHandle<()>>), StartupError> {
    let config = &shared.config;
    let id = config.numeric_node_id().expect("validated");
    let bind = config.raft_bind.expect("validated");
    let dir = config.data_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let log_path = dir.join(format!("node-{id}.raftlog"));
    let storage_err = |source| StartupError::Storage { path: log_path.clone(), source };
    std::fs::create_dir_all(&dir).map_err(storage_err)?;
    let storage = FileStorage::open(&log_path).map_err(storage_err)?;

    let listener = TcpListener::bind(bind).map_err(|source| StartupError::Bind { what: "peer", addr: bind, source })?;
    let addr = listener.local_addr().map_err(StartupError::Thread)?;
    let inbound = {
        let shared = shared.clone();
        Arc::new(move |from, msg| {
            shared.queue.push(Input::Peer(from, msg));
        })
    };
    let shutdown = Arc::new(AtomicBool::new(false));
    let (transport, threads) =
        PeerTransport::start(id, &config.peers, listener, inbound, shutdown.clone()).map_err(StartupError::Thread)?;
    // peer threads follow the service-wide flag
    let watcher = {
        let shared = shared.clone();
        spawn("peer-shutdown", move || {
            while !shared.shutdown.load(Ordering::Relaxed) {
                thread::sleep(POLL);
            }
            shutdown.store(true, Ordering::Relaxed);
        })?
    };

    let epoch = Instant::now();
    let peers = config.peers.iter().map(|p| p.id).collect();
    let node = RaftNode::new(RaftConfig::new(id, peers, id ^ unix_now()), storage, 0).map_err(storage_err)?;
    let sm = FeedStateMachine::new(shared.schedule.clone(), shared.vehicles.read().unwrap().clone()).with_ttl(config.feed_ttl);
    log::info!("node {id}: {} log entries on disk, peers on {addr}", node.last_index());
    let mut all = threads;
    all.push(watcher);
    Ok((Replica::new(shared.clone(), node, sm, transport, epoch), addr, all))
}

fn udp_ingest_loop(shared: &Shared, socket: UdpSocket) {
    if let Err(e) = socket.set_read_timeout(Some(POLL)) {
        log::error!("cannot set UDP timeout: {e}");
    }
    let mut buf = vec![0u8; MAX_DATAGRAM];
    while !shared.shutdown.load(Ordering::Relaxed) {
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
            Err(e) => {
                shared.counters.socket_error();
                log::warn!("UDP receive failed: {e}");
                continue;
            }
        };
        let outcome = match decode_packet(&buf[..n]) {
            Err(e) => Some(Reject::from_wire(&e)),
            Ok(report) => match validate_report(&report, unix_now()) {
                Verdict::Accept => {
                    shared.queue.push(Input::Report(report));
                    None
                }
                Verdict::Reject(reason) => Some(Reject::Gate(reason)),
            },
        };
        if let Some(reason) = outcome {
            log::trace!("rejected {n}-byte datagram: {reason:?}");
        }
        shared.counters.datagram(outcome);
    }
}

/// Sole writer of the feed when replication is off.
fn analysis_loop(shared: &Shared) {
    let mut feed = (*shared.snapshot()).clone();
    let mut last_evict = Instant::now();
    while !shared.shutdown.load(Ordering::Relaxed) {
        let (mut seen, mut changed) = (0, 0u64);
        if let Some(first) = shared.queue.pop_timeout(POLL) {
            // one map per batch: a concurrent reload is seen whole or not at all
            let vehicles = shared.vehicles.read().unwrap().clone();
            let mut next = Some(first);
            while let Some(input) = next {
                if let Input::Report(report) = input {
                    let record = match_position(&report, &vehicles, &shared.schedule);
                    feed.apply_record(record, unix_now());
                    changed += 1;
                }
                seen += 1;
                next = if seen < 256 { shared.queue.try_pop() } else { None };
            }
        }
        let mut evicted = 0;
        if last_evict.elapsed() >= EVICT_EVERY {
            evicted = feed.evict_stale(unix_now(), shared.config.feed_ttl);
            last_evict = Instant::now();
        }
        if changed > 0 || evicted > 0 {
            shared.counters.applied(changed);
            shared.publish(feed.clone());
        }
    }
}

fn http_loop(shared: &Shared, server: Server) {
    while !shared.shutdown.load(Ordering::Relaxed) {
        let request = match server.recv_timeout(POLL) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(e) => {
                log::warn!("HTTP accept failed: {e}");
                continue;
            }
        };
        let path = request.url().split('?').next().unwrap_or("").to_string();
        let response = match (request.method(), path.as_str()) {
            (Method::Get, FEED_PATH) => Response::from_data(encode_feed(&shared.snapshot()))
                .with_header(Header::from_bytes("Content-Type", "application/x-protobuf").unwrap()),
            (Method::Get, HEALTH_PATH) => text("ok".into()),
            (Method::Get, DEBUG_PATH) => text(debug_page(shared)),
            (Method::Post, RELOAD_PATH) => match shared.reload_vehicle_map(&shared.config.vehicle_map_path) {
                Ok(n) => text(format!("reloaded {n} vehicles\n")),
                Err(e) => text(format!("reload failed: {e}\n")).with_status_code(500),
            },
            _ => text("not found\n".into()).with_status_code(404),
        };
        if let Err(e) = request.respond(response) {
            log::debug!("HTTP response failed: {e}");
        }
    }
}

fn text(body: String) -> Response<io::Cursor<Vec<u8>>> {
    Response::from_string(body).with_header(Header::from_bytes("Content-Type", "text/plain; charset=utf-8").unwrap())
}

fn debug_page(shared: &Shared) -> String {
    let mut page = render_text(&shared.snapshot());
    page.push_str("\n# counters\n");
    page.push_str(&shared.counters().to_string());
    if let Some(r) = shared.replica.lock().unwrap().as_ref() {
        page.push_str(&format!(
            "\n# replication\nnode {} {:?} term {} leader {:?} last {} commit {} applied {} decode_failures {}\n",
            r.id, r.role, r.term, r.leader, r.last_index, r.commit_index, r.applied_index, r.decode_failures
        ));
    }
    page
}
