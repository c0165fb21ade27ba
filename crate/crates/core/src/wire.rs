//! The 28-byte position packet sent by vehicle sensors.
//!
//! Layout (all fields big-endian, floats are IEEE-754 binary32):
//!
//! | offset | size | field      |
//! |--------|------|------------|
//! | 0      | 4    | latitude   |
//! | 4      | 4    | longitude  |
//! | 8      | 4    | bearing    |
//! | 12     | 4    | speed km/h |
//! | 16     | 4    | vehicle_id |
//! | 20     | 8    | timestamp  |

use std::fmt;

use thiserror::Error;

/// Size of one encoded packet.
pub const PACKET_LEN: usize = 28;

/// Reports older than this (relative to the server clock) are rejected.
pub const MAX_STALENESS_SECS: u64 = 300;
/// Reports further ahead of the server clock than this are rejected.
pub const MAX_FUTURE_SKEW_SECS: u64 = 30;
/// Anything faster is treated as a garbage fix.
pub const MAX_SPEED_KMH: f32 = 300.0;

/// Decoded form of one sensor packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionReport {
    pub latitude: f32,
    pub longitude: f32,
    /// Degrees clockwise from true north, `[0, 360)`.
    pub bearing: f32,
    /// Kilometres per hour, as sent by the device.
    pub speed: f32,
    pub vehicle_id: u32,
    /// Unix epoch seconds.
    pub timestamp: u64,
}

/// Names a packet field, used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Latitude,
    Longitude,
    Bearing,
    Speed,
    VehicleId,
    Timestamp,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Latitude => "latitude",
            Field::Longitude => "longitude",
            Field::Bearing => "bearing",
            Field::Speed => "speed",
            Field::VehicleId => "vehicle_id",
            Field::Timestamp => "timestamp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum WireError {
    #[error("packet must be {PACKET_LEN} bytes, got {0}")]
    WrongLength(usize),
    #[error("invalid {0} field")]
    InvalidField(Field),
    #[error("report violates invariant on {0}")]
    InvalidReport(Field),
}

/// Reason a decoded report is refused by the ingest gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RejectReason {
    StaleTimestamp,
    FutureTimestamp,
    ImplausibleSpeed,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::StaleTimestamp => "stale_timestamp",
            RejectReason::FutureTimestamp => "future_timestamp",
            RejectReason::ImplausibleSpeed => "implausible_speed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl PositionReport {
    /// Checks the field invariants, returning the first offending field.
    pub fn check(&self) -> Result<(), Field> {
        let finite = |v: f32| v.is_finite();
        if !finite(self.latitude) || !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Field::Latitude);
        }
        if !finite(self.longitude) || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Field::Longitude);
        }
        if !finite(self.bearing) || !(0.0..360.0).contains(&self.bearing) {
            return Err(Field::Bearing);
        }
        if !finite(self.speed) || self.speed < 0.0 {
            return Err(Field::Speed);
        }
        if self.timestamp == 0 {
            return Err(Field::Timestamp);
        }
        Ok(())
    }
}

/// Encodes a report into its 28-byte wire form.
pub fn encode_packet(report: &PositionReport) -> Result<[u8; PACKET_LEN], WireError> {
    let mut report = *report;
    report.bearing = normalize_bearing(report.bearing);
    report.check().map_err(WireError::InvalidReport)?;
    Ok(encode_unchecked(&report))
}

/// Writes the fields without validating them. Used by tests and tooling that
/// need to produce deliberately malformed packets.
pub fn encode_unchecked(report: &PositionReport) -> [u8; PACKET_LEN] {
    let mut out = [0u8; PACKET_LEN];
    out[0..4].copy_from_slice(&report.latitude.to_be_bytes());
    out[4..8].copy_from_slice(&report.longitude.to_be_bytes());
    out[8..12].copy_from_slice(&report.bearing.to_be_bytes());
    out[12..16].copy_from_slice(&report.speed.to_be_bytes());
    out[16..20].copy_from_slice(&report.vehicle_id.to_be_bytes());
    out[20..28].copy_from_slice(&report.timestamp.to_be_bytes());
    out
}

/// Decodes and validates a packet. Any length other than 28 is refused.
pub fn decode_packet(bytes: &[u8]) -> Result<PositionReport, WireError> {
    let bytes: &[u8; PACKET_LEN] = bytes
        .try_into()
        .map_err(|_| WireError::WrongLength(bytes.len()))?;
    let f32_at = |o: usize| f32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
    let mut report = PositionReport {
        latitude: f32_at(0),
        longitude: f32_at(4),
        bearing: f32_at(8),
        speed: f32_at(12),
        vehicle_id: u32::from_be_bytes(bytes[16..20].try_into().unwrap()),
        timestamp: u64::from_be_bytes(bytes[20..28].try_into().unwrap()),
    };
    report.bearing = normalize_bearing(report.bearing);
    report.check().map_err(WireError::InvalidField)?;
    Ok(report)
}

/// Some GNSS units report due north as 360.0.
fn normalize_bearing(bearing: f32) -> f32 {
    if bearing == 360.0 {
        0.0
    } else {
        bearing
    }
}

/// Applies the ingest validity gate against the server clock `now`.
pub fn validate_report(report: &PositionReport, now: u64) -> Verdict {
    if report.timestamp.saturating_add(MAX_STALENESS_SECS) < now {
        return Verdict::Reject(RejectReason::StaleTimestamp);
    }
    if report.timestamp > now.saturating_add(MAX_FUTURE_SKEW_SECS) {
        return Verdict::Reject(RejectReason::FutureTimestamp);
    }
    if report.speed > MAX_SPEED_KMH {
        return Verdict::Reject(RejectReason::ImplausibleSpeed);
    }
    Verdict::Accept
}
