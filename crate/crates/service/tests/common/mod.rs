#![allow(dead_code)]

use std::net::{SocketAddr, UdpSocket};
use std::path::Path;
use std::time::{Duration, Instant};

use rtfeed_core::wire::encode_unchecked;
use rtfeed_core::{PositionReport, UtcOffset};
use rtfeed_service::{startup, ServiceConfig, ServiceHandle, FEED_PATH};
use rtfeed_testkit::{decode_feed, http_get, rt};

pub fn config(gtfs: &Path, vehicles: &Path, offset: UtcOffset) -> ServiceConfig {
    ServiceConfig {
        udp_bind: "127.0.0.1:0".parse().unwrap(),
        http_bind: "127.0.0.1:0".parse().unwrap(),
        gtfs_path: gtfs.to_path_buf(),
        vehicle_map_path: vehicles.to_path_buf(),
        agency_utc_offset: offset,
        feed_ttl: 900,
        queue_capacity: 4096,
        node_id: "1".into(),
        peers: Vec::new(),
        replication_enabled: false,
        raft_bind: None,
        data_dir: None,
    }
}

pub fn start(config: ServiceConfig) -> ServiceHandle {
    startup(config).expect("service starts")
}

pub fn send(to: SocketAddr, payload: &[u8]) {
    let socket = UdpSocket::bind("127.0.0.1:0").unwrap();
    socket.send_to(payload, to).unwrap();
}

pub fn send_report(to: SocketAddr, report: &PositionReport) {
    send(to, &encode_unchecked(report));
}

pub fn report(vehicle_id: u32, latitude: f32, longitude: f32, speed: f32, timestamp: u64) -> PositionReport {
    PositionReport { latitude, longitude, bearing: 90.0, speed, vehicle_id, timestamp }
}

/// Polls `check` every 10 ms until it holds or `limit` passes.
pub fn wait_until(limit: Duration, mut check: impl FnMut() -> bool) -> bool {
    let start = Instant::now();
    loop {
        if check() {
            return true;
        }
        if start.elapsed() > limit {
            return false;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

pub fn fetch_feed(http: SocketAddr) -> rt::FeedMessage {
    let (status, body) = http_get(http, FEED_PATH).expect("feed request");
    assert_eq!(status, 200);
    decode_feed(&body).expect("feed decodes")
}

pub fn vehicle_entity(feed: &rt::FeedMessage, vehicle_id: u32) -> Option<rt::VehiclePosition> {
    feed.entity
        .iter()
        .filter_map(|e| e.vehicle.clone())
        .find(|v| v.vehicle.as_ref().and_then(|d| d.id.as_deref()) == Some(&vehicle_id.to_string()))
}

pub fn assert_conserved(handle: &ServiceHandle) {
    let c = handle.counters();
    assert!(c.conserved(), "counters not conserved:\n{c}");
}
