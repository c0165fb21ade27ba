//! The serve-ready GTFS-RT vehicle positions feed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::matcher::{StopStatus, VehiclePositionRecord};
use crate::proto::ProtoWriter;

pub const GTFS_RT_VERSION: &str = "2.0";

/// Default age after which a silent vehicle is dropped from the feed.
pub const DEFAULT_FEED_TTL_SECS: u64 = 900;

// FeedHeader.Incrementality
const FULL_DATASET: u64 = 0;
// VehiclePosition.VehicleStopStatus
const STOPPED_AT: u64 = 1;
const IN_TRANSIT_TO: u64 = 2;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedSnapshot {
    pub header_timestamp: u64,
    /// Keyed by vehicle id, so iteration order is the encoding order.
    pub entities: BTreeMap<u32, VehiclePositionRecord>,
    /// Records ignored because a newer one was already applied.
    pub stale_updates: u64,
}

impl FeedSnapshot {
    pub fn new(now: u64) -> Self {
        Self { header_timestamp: now, ..Default::default() }
    }

    /// Stores `record` unless the feed already holds a newer one for the
    /// same vehicle. Returns whether the record was stored.
    pub fn apply_record(&mut self, record: VehiclePositionRecord, now: u64) -> bool {
        self.header_timestamp = now;
        let id = record.vehicle_id();
        if let Some(existing) = self.entities.get(&id) {
            if record.timestamp < existing.timestamp {
                self.stale_updates += 1;
                return false;
            }
        }
        self.entities.insert(id, record);
        true
    }

    /// Removes entities older than `now - ttl`. Returns how many went.
    pub fn evict_stale(&mut self, now: u64, ttl: u64) -> usize {
        let cutoff = now.saturating_sub(ttl);
        let before = self.entities.len();
        self.entities.retain(|_, r| r.timestamp >= cutoff);
        before - self.entities.len()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Encodes the snapshot as a GTFS-realtime `FeedMessage`.
pub fn encode_feed(snapshot: &FeedSnapshot) -> Vec<u8> {
    let mut w = ProtoWriter::new();
    w.message(1, |h| {
        h.string(1, GTFS_RT_VERSION)
            .varint(2, FULL_DATASET)
            .varint(3, snapshot.header_timestamp);
    });
    for (id, record) in &snapshot.entities {
        w.message(2, |e| {
            e.string(1, &id.to_string());
            e.message(4, |vp| write_vehicle_position(vp, record));
        });
    }
    w.into_bytes()
}

fn write_vehicle_position(w: &mut ProtoWriter, r: &VehiclePositionRecord) {
    if r.trip_id.is_some() || r.route_id.is_some() {
        w.message(1, |t| {
            if let Some(trip_id) = &r.trip_id {
                t.string(1, trip_id);
            }
            if let Some(route_id) = &r.route_id {
                t.string(5, route_id);
            }
        });
    }
    w.message(2, |p| {
        p.float(1, r.latitude)
            .float(2, r.longitude)
            .float(3, r.bearing)
            .float(5, r.speed as f32);
    });
    if let Some(stop) = &r.stop {
        w.varint(3, stop.stop_sequence as u64);
    }
    match r.current_status {
        StopStatus::StoppedAt => {
            w.varint(4, STOPPED_AT);
        }
        StopStatus::InTransitTo => {
            w.varint(4, IN_TRANSIT_TO);
        }
        StopStatus::Unknown => {}
    }
    w.varint(5, r.timestamp);
    if let Some(stop) = &r.stop {
        w.string(7, &stop.stop_id);
    }
    w.message(8, |v| {
        v.string(1, &r.vehicle.vehicle_id.to_string());
        if !r.vehicle.label.is_empty() {
            v.string(2, &r.vehicle.label);
        }
        if !r.vehicle.license_plate.is_empty() {
            v.string(3, &r.vehicle.license_plate);
        }
    });
}

/// Plain-text dump for the debug endpoint.
pub fn render_text(snapshot: &FeedSnapshot) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "gtfs_realtime_version: {GTFS_RT_VERSION}\ntimestamp: {}\nentities: {}",
        snapshot.header_timestamp,
        snapshot.entities.len()
    );
    let opt = |o: Option<&str>| o.unwrap_or("-").to_owned();
    for (id, r) in &snapshot.entities {
        let _ = writeln!(
            out,
            "vehicle {id} label={:?} trip={} route={} stop={} seq={} status={:?} lat={} lon={} bearing={} speed_mps={:.3} ts={}",
            r.vehicle.label,
            opt(r.trip_id.as_deref()),
            opt(r.route_id.as_deref()),
            opt(r.stop.as_ref().map(|s| s.stop_id.as_str())),
            r.stop.as_ref().map_or("-".to_owned(), |s| s.stop_sequence.to_string()),
            r.current_status,
            r.latitude,
            r.longitude,
            r.bearing,
            r.speed,
            r.timestamp,
        );
    }
    out
}
