//! Loader for the slice of a GTFS static dataset the matcher needs:
//! `stops.txt`, `trips.txt`, `stop_times.txt`, and optionally `routes.txt`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const SECONDS_PER_DAY: u32 = 86_400;

#[derive(Debug, Error)]
pub enum GtfsError {
    #[error("required table {0} is missing")]
    MissingFile(String),
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: u64, message: String },
    #[error("{file}:{line}: unknown {kind} '{id}'")]
    DanglingReference { file: String, line: u64, kind: &'static str, id: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("reading archive {path}: {message}")]
    Archive { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stop {
    pub stop_id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopTime {
    pub stop_id: String,
    /// Position of the stop in [`GtfsData::stops`].
    pub stop_index: usize,
    /// Seconds since midnight of the service day; may exceed 86400.
    pub arrival: u32,
    pub departure: u32,
    pub stop_sequence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripSchedule {
    pub trip_id: String,
    pub route_id: String,
    /// Ordered by strictly increasing `stop_sequence`, never empty. Times
    /// never decrease along the list.
    pub stop_times: Vec<StopTime>,
}

impl TripSchedule {
    /// First departure.
    pub fn span_start(&self) -> u32 {
        self.stop_times[0].departure
    }

    /// Last arrival.
    pub fn span_end(&self) -> u32 {
        self.stop_times[self.stop_times.len() - 1].arrival
    }
}

/// Parsed dataset. Trips are sorted by `trip_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GtfsData {
    pub stops: Vec<Stop>,
    pub trips: Vec<TripSchedule>,
}

impl GtfsData {
    pub fn trip(&self, trip_id: &str) -> Option<&TripSchedule> {
        self.trips
            .binary_search_by(|t| t.trip_id.as_str().cmp(trip_id))
            .ok()
            .map(|i| &self.trips[i])
    }

    /// Mean stop latitude, the reference for planar projection.
    pub fn mean_latitude(&self) -> f64 {
        if self.stops.is_empty() {
            return 0.0;
        }
        self.stops.iter().map(|s| s.latitude).sum::<f64>() / self.stops.len() as f64
    }

    pub fn stop_time_count(&self) -> usize {
        self.trips.iter().map(|t| t.stop_times.len()).sum()
    }
}

/// Parses `HH:MM:SS` (hours may exceed 23, one-digit hours allowed) into
/// seconds since midnight.
pub fn parse_gtfs_time(s: &str) -> Option<u32> {
    let mut parts = s.trim().split(':');
    let h: u32 = parts.next()?.parse().ok()?;
    let m_str = parts.next()?;
    let s_str = parts.next()?;
    if parts.next().is_some() || m_str.len() != 2 || s_str.len() != 2 {
        return None;
    }
    let m: u32 = m_str.parse().ok()?;
    let sec: u32 = s_str.parse().ok()?;
    if m > 59 || sec > 59 {
        return None;
    }
    h.checked_mul(3600)?.checked_add(m * 60 + sec)
}

/// A fixed offset from UTC, in minutes east.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UtcOffset(pub i32);

impl UtcOffset {
    pub const MAX_MINUTES: i32 = 14 * 60;

    pub fn minutes(minutes: i32) -> Option<Self> {
        (-Self::MAX_MINUTES..=Self::MAX_MINUTES)
            .contains(&minutes)
            .then_some(Self(minutes))
    }

    pub fn seconds(&self) -> i64 {
        self.0 as i64 * 60
    }
}

/// Local seconds since midnight, in `[0, 86400)`, for a Unix timestamp.
pub fn seconds_since_midnight(timestamp: u64, offset: UtcOffset) -> u32 {
    let local = timestamp as i128 + offset.seconds() as i128;
    local.rem_euclid(SECONDS_PER_DAY as i128) as u32
}

/// Unix timestamp of the local midnight that starts the day containing
/// `timestamp`.
pub fn local_midnight(timestamp: u64, offset: UtcOffset) -> u64 {
    timestamp - seconds_since_midnight(timestamp, offset) as u64
}

#[derive(Deserialize)]
struct StopRow {
    stop_id: String,
    #[serde(default)]
    stop_name: String,
    stop_lat: f64,
    stop_lon: f64,
}

#[derive(Deserialize)]
struct TripRow {
    trip_id: String,
    route_id: String,
}

#[derive(Deserialize)]
struct RouteRow {
    route_id: String,
}

#[derive(Deserialize)]
struct StopTimeRow {
    trip_id: String,
    #[serde(default)]
    arrival_time: String,
    #[serde(default)]
    departure_time: String,
    stop_id: String,
    stop_sequence: u32,
}

trait TableSource {
    fn read(&mut self, name: &str) -> Result<Option<Vec<u8>>, GtfsError>;
}

struct DirSource(PathBuf);

impl TableSource for DirSource {
    fn read(&mut self, name: &str) -> Result<Option<Vec<u8>>, GtfsError> {
        let path = self.0.join(name);
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(GtfsError::Io { path, source }),
        }
    }
}

struct ZipSource {
    path: PathBuf,
    archive: zip::ZipArchive<fs::File>,
}

impl TableSource for ZipSource {
    fn read(&mut self, name: &str) -> Result<Option<Vec<u8>>, GtfsError> {
        // tolerate archives that wrap the tables in one top-level folder
        let found = self
            .archive
            .file_names()
            .find(|n| *n == name || n.rsplit('/').next() == Some(name))
            .map(str::to_owned);
        let Some(entry) = found else { return Ok(None) };
        let mut file = self.archive.by_name(&entry).map_err(|e| GtfsError::Archive {
            path: self.path.clone(),
            message: e.to_string(),
        })?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)
            .map_err(|source| GtfsError::Io { path: self.path.clone(), source })?;
        Ok(Some(buf))
    }
}

/// Loads a GTFS dataset from a directory or a ZIP archive.
pub fn load_gtfs(source: impl AsRef<Path>) -> Result<GtfsData, GtfsError> {
    let path = source.as_ref();
    let meta = fs::metadata(path).map_err(|source| GtfsError::Io { path: path.into(), source })?;
    if meta.is_dir() {
        load_from(&mut DirSource(path.to_path_buf()))
    } else {
        let file = fs::File::open(path).map_err(|source| GtfsError::Io { path: path.into(), source })?;
        let archive = zip::ZipArchive::new(file).map_err(|e| GtfsError::Archive {
            path: path.into(),
            message: e.to_string(),
        })?;
        load_from(&mut ZipSource { path: path.to_path_buf(), archive })
    }
}

fn required(src: &mut dyn TableSource, name: &str) -> Result<Vec<u8>, GtfsError> {
    src.read(name)?.ok_or_else(|| GtfsError::MissingFile(name.to_owned()))
}

fn rows<T: for<'de> Deserialize<'de>>(file: &str, bytes: &[u8]) -> Result<Vec<(u64, T)>, GtfsError> {
    let parse_err = |line: u64, message: String| GtfsError::Parse { file: file.to_owned(), line, message };
    let bytes = bytes.strip_prefix(b"\xef\xbb\xbf").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.byte_headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let mut out = Vec::new();
    let mut record = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(e.position().map_or(0, |p| p.line()), e.to_string())),
        }
        let line = record.position().map_or(0, |p| p.line());
        let value = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        out.push((line, value));
    }
    Ok(out)
}

fn load_from(src: &mut dyn TableSource) -> Result<GtfsData, GtfsError> {
    let stops_raw = required(src, "stops.txt")?;
    let trips_raw = required(src, "trips.txt")?;
    let stop_times_raw = required(src, "stop_times.txt")?;
    let routes_raw = src.read("routes.txt")?;

    let mut stops = Vec::new();
    let mut stop_index = HashMap::new();
    for (line, row) in rows::<StopRow>("stops.txt", &stops_raw)? {
        let parse_err = |message: String| GtfsError::Parse {
            file: "stops.txt".into(),
            line,
            message,
        };
        if row.stop_id.is_empty() {
            return Err(parse_err("empty stop_id".into()));
        }
        if !(-90.0..=90.0).contains(&row.stop_lat) || !(-180.0..=180.0).contains(&row.stop_lon) {
            return Err(parse_err(format!("coordinates out of range for '{}'", row.stop_id)));
        }
        if stop_index.insert(row.stop_id.clone(), stops.len()).is_some() {
            return Err(parse_err(format!("duplicate stop_id '{}'", row.stop_id)));
        }
        stops.push(Stop {
            stop_id: row.stop_id,
            name: row.stop_name,
            latitude: row.stop_lat,
            longitude: row.stop_lon,
        });
    }

    let routes: Option<HashSet<String>> = match routes_raw {
        Some(raw) => Some(
            rows::<RouteRow>("routes.txt", &raw)?
                .into_iter()
                .map(|(_, row)| row.route_id)
                .collect(),
        ),
        None => None,
    };

    let mut trip_rows: HashMap<String, (String, Vec<StopTime>)> = HashMap::new();
    for (line, row) in rows::<TripRow>("trips.txt", &trips_raw)? {
        if let Some(routes) = &routes {
            if !routes.contains(&row.route_id) {
                return Err(GtfsError::DanglingReference {
                    file: "trips.txt".into(),
                    line,
                    kind: "route",
                    id: row.route_id,
                });
            }
        }
        if trip_rows.insert(row.trip_id.clone(), (row.route_id, Vec::new())).is_some() {
            return Err(GtfsError::Parse {
                file: "trips.txt".into(),
                line,
                message: format!("duplicate trip_id '{}'", row.trip_id),
            });
        }
    }

    for (line, row) in rows::<StopTimeRow>("stop_times.txt", &stop_times_raw)? {
        let parse_err = |message: String| GtfsError::Parse {
            file: "stop_times.txt".into(),
            line,
            message,
        };
        let Some(&idx) = stop_index.get(&row.stop_id) else {
            return Err(GtfsError::DanglingReference {
                file: "stop_times.txt".into(),
                line,
                kind: "stop",
                id: row.stop_id,
            });
        };
        let Some((_, times)) = trip_rows.get_mut(&row.trip_id) else {
            return Err(GtfsError::DanglingReference {
                file: "stop_times.txt".into(),
                line,
                kind: "trip",
                id: row.trip_id,
            });
        };
        let parse_time = |s: &str| -> Result<Option<u32>, GtfsError> {
            if s.is_empty() {
                return Ok(None);
            }
            parse_gtfs_time(s)
                .map(Some)
                .ok_or_else(|| parse_err(format!("bad time '{s}'")))
        };
        let (arrival, departure) = match (parse_time(&row.arrival_time)?, parse_time(&row.departure_time)?) {
            (Some(a), Some(d)) => (a, d),
            (Some(a), None) => (a, a),
            (None, Some(d)) => (d, d),
            (None, None) => return Err(parse_err("stop_time without arrival or departure".into())),
        };
        if arrival > departure {
            return Err(parse_err(format!("arrival {arrival} after departure {departure}")));
        }
        times.push(StopTime {
            stop_id: row.stop_id,
            stop_index: idx,
            arrival,
            departure,
            stop_sequence: row.stop_sequence,
        });
    }

    let mut trips = Vec::with_capacity(trip_rows.len());
    for (trip_id, (route_id, mut stop_times)) in trip_rows {
        if stop_times.is_empty() {
            continue;
        }
        stop_times.sort_by_key(|st| st.stop_sequence);
        if let Some(w) = stop_times.windows(2).find(|w| w[0].stop_sequence == w[1].stop_sequence) {
            return Err(GtfsError::Parse {
                file: "stop_times.txt".into(),
                line: 0,
                message: format!("trip '{trip_id}' repeats stop_sequence {}", w[0].stop_sequence),
            });
        }
        if let Some(w) = stop_times.windows(2).find(|w| w[0].departure > w[1].arrival) {
            return Err(GtfsError::Parse {
                file: "stop_times.txt".into(),
                line: 0,
                message: format!(
                    "trip '{trip_id}' goes back in time between stop_sequence {} and {}",
                    w[0].stop_sequence, w[1].stop_sequence
                ),
            });
        }
        trips.push(TripSchedule { trip_id, route_id, stop_times });
    }
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    Ok(GtfsData { stops, trips })
}
