//! A GTFS feed written around the current time, so that a simulated trip
//! replayed without pacing produces reports the ingest gate accepts.
//!
//! The agency offset is chosen so that `now` falls near local noon; the
//! trip ends a few seconds before `now`.

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rtfeed_core::gtfs::{local_midnight, seconds_since_midnight};
use rtfeed_core::UtcOffset;

pub const LIVE_TRIP: &str = "L1";
pub const LIVE_ROUTE: &str = "R1";
pub const LIVE_VEHICLE: u32 = 7;
/// Vehicle present in the map with no route.
pub const LIVE_SPARE_VEHICLE: u32 = 9;

#[derive(Debug, Clone)]
pub struct LiveStop {
    pub id: &'static str,
    pub lat: f64,
    pub lon: f64,
    pub arrival: u32,
    pub departure: u32,
}

#[derive(Debug, Clone)]
pub struct LiveFixture {
    pub dir: PathBuf,
    pub vehicle_map: PathBuf,
    pub offset: UtcOffset,
    /// Unix time of local midnight for the service day.
    pub midnight: u64,
    pub stops: Vec<LiveStop>,
}

impl LiveFixture {
    /// Unix time of a local schedule time on the service day.
    pub fn unix(&self, local: u32) -> u64 {
        self.midnight + local as u64
    }

    pub fn trip_start(&self) -> u32 {
        self.stops[0].departure
    }
}

fn hms(t: u32) -> String {
    format!("{:02}:{:02}:{:02}", t / 3600, t / 60 % 60, t % 60)
}

/// Writes the fixture into `dir` (which must exist).
pub fn write_live_fixture(dir: &Path, now: u64) -> io::Result<LiveFixture> {
    let utc = (now % 86_400) as i64;
    let minutes = ((43_200 - utc) as f64 / 60.0).round() as i32;
    let offset = UtcOffset::minutes(minutes).expect("within half a day");
    let local = seconds_since_midnight(now, offset);
    let midnight = local_midnight(now, offset);

    // ~460 m per segment along one parallel; 90 s runs, 30 s dwell at B
    let end = local - 5;
    let stops = vec![
        LiveStop { id: "A", lat: 34.05, lon: -118.250, arrival: end - 240, departure: end - 240 },
        LiveStop { id: "B", lat: 34.05, lon: -118.245, arrival: end - 150, departure: end - 120 },
        LiveStop { id: "C", lat: 34.05, lon: -118.240, arrival: end - 30, departure: end - 30 },
    ];
    let mut stop_rows = String::from("stop_id,stop_name,stop_lat,stop_lon\n");
    let mut time_rows = String::from("trip_id,arrival_time,departure_time,stop_id,stop_sequence\n");
    for (i, s) in stops.iter().enumerate() {
        writeln!(stop_rows, "{},Stop {},{:.6},{:.6}", s.id, s.id, s.lat, s.lon).unwrap();
        writeln!(time_rows, "{LIVE_TRIP},{},{},{},{}", hms(s.arrival), hms(s.departure), s.id, i + 1).unwrap();
    }
    std::fs::write(dir.join("stops.txt"), stop_rows)?;
    std::fs::write(dir.join("stop_times.txt"), time_rows)?;
    std::fs::write(dir.join("routes.txt"), format!("route_id,route_short_name,route_type\n{LIVE_ROUTE},1,3\n"))?;
    std::fs::write(dir.join("trips.txt"), format!("route_id,service_id,trip_id\n{LIVE_ROUTE},ALL,{LIVE_TRIP}\n"))?;
    let vehicle_map = dir.join("vehicles.csv");
    std::fs::write(
        &vehicle_map,
        format!(
            "vehicle_id,route_id,label,license_plate,wheelchair_accessible\n\
             {LIVE_VEHICLE},{LIVE_ROUTE},Bus {LIVE_VEHICLE},,1\n\
             {LIVE_SPARE_VEHICLE},,Spare,,0\n"
        ),
    )?;
    Ok(LiveFixture { dir: dir.to_path_buf(), vehicle_map, offset, midnight, stops })
}
