//! Seeded random schedules and reports.

use rand::seq::SliceRandom;
use rand::Rng;

use rtfeed_core::geo::offset_m;
use rtfeed_core::gtfs::{GtfsData, Stop, StopTime, TripSchedule};
use rtfeed_core::vehicles::{VehicleDescriptor, VehicleMap};
use rtfeed_core::wire::PositionReport;

pub const CENTER: (f64, f64) = (34.05, -118.25);

/// Trips with two stop_times each, i.e. bare spans. Some spans run past
/// midnight (times above 86400).
pub fn span_trips(rng: &mut impl Rng, n: usize) -> Vec<TripSchedule> {
    let mut trips: Vec<TripSchedule> = (0..n)
        .map(|i| {
            let start = rng.gen_range(0..100_000u32);
            let len = if rng.gen_bool(0.1) { 0 } else { rng.gen_range(1..7_200u32) };
            let st = |t, seq| StopTime { stop_id: "s".into(), stop_index: 0, arrival: t, departure: t, stop_sequence: seq };
            TripSchedule {
                trip_id: format!("T{i:05}"),
                route_id: "R".into(),
                stop_times: vec![st(start, 1), st(start + len, 2)],
            }
        })
        .collect();
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    trips
}

pub fn stops(rng: &mut impl Rng, n: usize, spread_deg: f64) -> Vec<Stop> {
    (0..n)
        .map(|i| Stop {
            stop_id: format!("S{i:03}"),
            name: format!("Stop {i}"),
            latitude: CENTER.0 + rng.gen_range(-spread_deg..spread_deg),
            longitude: CENTER.1 + rng.gen_range(-spread_deg..spread_deg),
        })
        .collect()
}

/// A schedule of `n_trips` trips over `n_stops` stops on `n_routes` routes.
pub fn schedule(rng: &mut impl Rng, n_trips: usize, n_stops: usize, n_routes: usize) -> GtfsData {
    let stops = stops(rng, n_stops, 0.02);
    let mut trips = Vec::with_capacity(n_trips);
    for i in 0..n_trips {
        let count = rng.gen_range(2..=12usize).min(n_stops.max(2));
        let mut t = rng.gen_range(0..95_000u32);
        let mut stop_times = Vec::with_capacity(count);
        let mut seq = 0;
        for k in 0..count {
            if k > 0 {
                t += rng.gen_range(30..600);
            }
            let dwell = if rng.gen_bool(0.5) { rng.gen_range(0..90) } else { 0 };
            seq += rng.gen_range(1..3);
            let stop_index = rng.gen_range(0..stops.len());
            stop_times.push(StopTime {
                stop_id: stops[stop_index].stop_id.clone(),
                stop_index,
                arrival: t,
                departure: t + dwell,
                stop_sequence: seq,
            });
            t += dwell;
        }
        trips.push(TripSchedule {
            trip_id: format!("T{i:03}"),
            route_id: format!("R{}", rng.gen_range(0..n_routes)),
            stop_times,
        });
    }
    trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    GtfsData { stops, trips }
}

/// Vehicles 1..=n, most on a random route, some unassigned.
pub fn vehicles(rng: &mut impl Rng, n: u32, n_routes: usize) -> VehicleMap {
    (1..=n)
        .map(|id| {
            let route_id = rng.gen_bool(0.85).then(|| format!("R{}", rng.gen_range(0..n_routes)));
            (id, VehicleDescriptor { vehicle_id: id, label: format!("Bus {id}"), route_id, ..Default::default() })
        })
        .collect()
}

/// A report positioned near a stop of an active trip (often within the
/// attach radius), or occasionally anywhere. `midnight` is the Unix time of
/// local midnight for the service day.
pub fn report(rng: &mut impl Rng, gtfs: &GtfsData, vehicles: &VehicleMap, midnight: u64) -> PositionReport {
    let ids: Vec<u32> = vehicles.keys().copied().collect();
    let vehicle_id = if rng.gen_bool(0.05) { 10_000 } else { *ids.choose(rng).unwrap() };
    let trip = gtfs.trips.choose(rng).unwrap();
    let (start, end) = (trip.span_start(), trip.span_end());
    let sched = if rng.gen_bool(0.9) { rng.gen_range(start..=end) } else { rng.gen_range(0..86_400) };
    // snap schedule time back into the day the service runs on
    let timestamp = midnight + sched as u64;
    let anchor = if rng.gen_bool(0.9) {
        let st = trip.stop_times.choose(rng).unwrap();
        let s = &gtfs.stops[st.stop_index];
        (s.latitude, s.longitude)
    } else {
        (CENTER.0 + rng.gen_range(-0.02..0.02), CENTER.1 + rng.gen_range(-0.02..0.02))
    };
    let r = rng.gen_range(0.0..40.0f64);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (lat, lon) = offset_m(anchor, r * theta.cos(), r * theta.sin());
    PositionReport {
        latitude: lat as f32,
        longitude: lon as f32,
        bearing: rng.gen_range(0.0..360.0),
        speed: if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.1..80.0) },
        vehicle_id,
        timestamp,
    }
}
