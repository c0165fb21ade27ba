//! Per-vehicle metadata and route attachment, loaded from a preset file.
//!
//! File format: CSV with a required header line and the columns
//! `vehicle_id,route_id,label,license_plate,wheelchair_accessible`, where
//! `route_id` may be empty and `wheelchair_accessible` is `0` (unknown),
//! `1` (no) or `2` (yes).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WheelchairAccess {
    #[default]
    Unknown,
    No,
    Yes,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VehicleDescriptor {
    pub vehicle_id: u32,
    pub label: String,
    pub license_plate: String,
    pub wheelchair_accessible: WheelchairAccess,
    pub route_id: Option<String>,
}

impl VehicleDescriptor {
    /// Descriptor for a vehicle that is not in the map.
    pub fn bare(vehicle_id: u32) -> Self {
        Self { vehicle_id, ..Default::default() }
    }
}

pub type VehicleMap = BTreeMap<u32, VehicleDescriptor>;

#[derive(Debug, Error)]
pub enum VehicleMapError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Deserialize)]
struct Row {
    vehicle_id: u32,
    #[serde(default)]
    route_id: String,
    #[serde(default)]
    label: String,
    #[serde(default)]
    license_plate: String,
    #[serde(default)]
    wheelchair_accessible: String,
}

pub fn load_vehicle_map(path: impl AsRef<Path>) -> Result<VehicleMap, VehicleMapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| VehicleMapError::Io { path: path.into(), source })?;
    parse_vehicle_map(&text)
}

pub fn parse_vehicle_map(text: &str) -> Result<VehicleMap, VehicleMapError> {
    let parse_err = |line: u64, message: String| VehicleMapError::Parse { line, message };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if !headers.iter().any(|h| h == "vehicle_id") {
        return Err(parse_err(1, "header line with a vehicle_id column is required".into()));
    }
    let mut map = VehicleMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let wheelchair_accessible = match row.wheelchair_accessible.as_str() {
            "" | "0" => WheelchairAccess::Unknown,
            "1" => WheelchairAccess::No,
            "2" => WheelchairAccess::Yes,
            other => return Err(parse_err(line, format!("wheelchair_accessible must be 0, 1 or 2, got '{other}'"))),
        };
        let descriptor = VehicleDescriptor {
            vehicle_id: row.vehicle_id,
            label: row.label,
            license_plate: row.license_plate,
            wheelchair_accessible,
            route_id: (!row.route_id.is_empty()).then_some(row.route_id),
        };
        if map.insert(row.vehicle_id, descriptor).is_some() {
            return Err(parse_err(line, format!("duplicate vehicle_id {}", row.vehicle_id)));
        }
    }
    Ok(map)
}
