//! Linear-scan reference implementations. Nothing here calls into the
//! indexes or the matcher; only the data types are shared.

use rtfeed_core::gtfs::{GtfsData, TripSchedule};
use rtfeed_core::matcher::StopStatus;
use rtfeed_core::vehicles::VehicleMap;
use rtfeed_core::wire::PositionReport;

const DAY: u32 = 86_400;

/// Every trip containing `t` or `t + 86400`, as `(trip index, matched time)`,
/// in trip order. A trip containing both is reported at `t`.
pub fn dual_stab(trips: &[TripSchedule], t: u32) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    for (i, trip) in trips.iter().enumerate() {
        let start = trip.stop_times.first().unwrap().departure;
        let end = trip.stop_times.last().unwrap().arrival;
        if start <= t && t <= end {
            out.push((i, t));
        } else if start <= t + DAY && t + DAY <= end {
            out.push((i, t + DAY));
        }
    }
    out
}

/// `(lon * cos(ref_lat), lat)`.
pub fn project(ref_lat: f64, lat: f64, lon: f64) -> [f64; 2] {
    [lon * ref_lat.to_radians().cos(), lat]
}

pub fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// Index of the point nearest `q`, ties to the smaller key.
pub fn nearest<K: Ord>(points: &[([f64; 2], K)], q: [f64; 2]) -> usize {
    let mut best = 0;
    for i in 1..points.len() {
        let (d, bd) = (dist2(points[i].0, q), dist2(points[best].0, q));
        if d < bd || (d == bd && points[i].1 < points[best].1) {
            best = i;
        }
    }
    best
}

pub fn haversine(a: (f64, f64), b: (f64, f64)) -> f64 {
    let r = 6_371_000.0f64;
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dp = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * r * h.min(1.0).sqrt().asin()
}

/// Indices of the stop_times bracketing `t`, by direct enumeration.
pub fn stops_between(trip: &TripSchedule, t: u32) -> Vec<usize> {
    let st = &trip.stop_times;
    let dwell: Vec<usize> = (0..st.len()).filter(|&k| st[k].arrival <= t && t <= st[k].departure).collect();
    if !dwell.is_empty() {
        return dwell;
    }
    if t < st[0].arrival {
        return vec![0];
    }
    if t > st[st.len() - 1].departure {
        return vec![st.len() - 1];
    }
    let before = (0..st.len()).filter(|&k| st[k].departure < t).max().unwrap();
    let after = (0..st.len()).filter(|&k| st[k].arrival > t).min().unwrap();
    (before..=after).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub route_id: Option<String>,
    pub trip_id: Option<String>,
    pub stop: Option<(String, u32)>,
    pub status: StopStatus,
}

/// Full brute-force trip match for one report.
pub fn match_report(report: &PositionReport, vehicles: &VehicleMap, gtfs: &GtfsData, utc_offset_min: i32) -> Outcome {
    let mut out = Outcome { route_id: None, trip_id: None, stop: None, status: StopStatus::Unknown };
    let route = vehicles
        .iter()
        .find(|(id, _)| **id == report.vehicle_id)
        .and_then(|(_, v)| v.route_id.clone());
    let Some(route) = route else { return out };
    out.route_id = Some(route.clone());

    let local = report.timestamp as i64 + utc_offset_min as i64 * 60;
    let t = (((local % DAY as i64) + DAY as i64) % DAY as i64) as u32;
    let cands: Vec<(usize, u32)> = dual_stab(&gtfs.trips, t)
        .into_iter()
        .filter(|(i, _)| gtfs.trips[*i].route_id == route)
        .collect();
    if cands.is_empty() {
        return out;
    }

    let ref_lat = gtfs.stops.iter().map(|s| s.latitude).sum::<f64>() / gtfs.stops.len() as f64;
    let (lat, lon) = (report.latitude as f64, report.longitude as f64);
    let q = project(ref_lat, lat, lon);
    let point = |trip: &TripSchedule, k: usize| {
        let s = &gtfs.stops[trip.stop_times[k].stop_index];
        (project(ref_lat, s.latitude, s.longitude), (s.stop_id.clone(), trip.stop_times[k].stop_sequence))
    };

    let (chosen, time) = if cands.iter().all(|(i, _)| gtfs.trips[*i].trip_id == gtfs.trips[cands[0].0].trip_id) {
        cands[0]
    } else {
        let mut best: Option<(f64, (usize, u32))> = None;
        let mut sorted = cands.clone();
        sorted.sort_by(|a, b| gtfs.trips[a.0].trip_id.cmp(&gtfs.trips[b.0].trip_id));
        for (i, time) in sorted {
            let trip = &gtfs.trips[i];
            let pts: Vec<_> = stops_between(trip, time).into_iter().map(|k| point(trip, k)).collect();
            let d = dist2(pts[nearest(&pts, q)].0, q).sqrt();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, (i, time)));
            }
        }
        best.unwrap().1
    };
    let trip = &gtfs.trips[chosen];
    out.trip_id = Some(trip.trip_id.clone());

    let all: Vec<_> = (0..trip.stop_times.len()).map(|k| point(trip, k)).collect();
    let k = nearest(&all, q);
    let stop = &gtfs.stops[trip.stop_times[k].stop_index];
    if haversine((lat, lon), (stop.latitude, stop.longitude)) <= 20.0 {
        out.stop = Some(all[k].1.clone());
        out.status = if report.speed == 0.0 { StopStatus::StoppedAt } else { StopStatus::InTransitTo };
    } else {
        let upcoming: Vec<_> = (0..trip.stop_times.len())
            .filter(|&k| trip.stop_times[k].arrival >= time)
            .map(|k| point(trip, k))
            .collect();
        out.stop = Some(if upcoming.is_empty() {
            all[k].1.clone()
        } else {
            upcoming[nearest(&upcoming, q)].1.clone()
        });
        out.status = StopStatus::InTransitTo;
    }
    out
}
