//! Turns one validated position report into a GTFS-RT vehicle position.
//!
//! Steps: look up the vehicle's route; stab the trip tree at the local time
//! of day; keep trips on that route; narrow each candidate to the stops
//! around the current time; pick the candidate whose narrowed stops come
//! closest to the vehicle; then attach the vehicle to the nearest stop of
//! the chosen trip when it is within [`STOP_ATTACH_RADIUS_M`].

use std::ops::RangeInclusive;

use crate::geo::{haversine_m, planar_dist2, Equirectangular};
use crate::gtfs::{seconds_since_midnight, GtfsData, StopTime, TripSchedule, UtcOffset};
use crate::index::{StopNeighborTree, TripHit, TripIntervalTree};
use crate::vehicles::{VehicleDescriptor, VehicleMap};
use crate::wire::PositionReport;

/// A vehicle this close to a stop is considered at the stop.
pub const STOP_ATTACH_RADIUS_M: f64 = 20.0;

pub const KMH_PER_MPS: f64 = 3.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopStatus {
    #[default]
    Unknown,
    StoppedAt,
    InTransitTo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopAttachment {
    pub stop_id: String,
    pub stop_sequence: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePositionRecord {
    pub trip_id: Option<String>,
    pub route_id: Option<String>,
    pub stop: Option<StopAttachment>,
    pub current_status: StopStatus,
    pub latitude: f32,
    pub longitude: f32,
    pub bearing: f32,
    /// Metres per second.
    pub speed: f64,
    pub vehicle: VehicleDescriptor,
    pub timestamp: u64,
}

impl VehiclePositionRecord {
    /// Position, vehicle and timestamp only; no trip information.
    pub fn minimal(report: &PositionReport, vehicle: VehicleDescriptor) -> Self {
        Self {
            trip_id: None,
            route_id: None,
            stop: None,
            current_status: StopStatus::Unknown,
            latitude: report.latitude,
            longitude: report.longitude,
            bearing: report.bearing,
            speed: report.speed as f64 / KMH_PER_MPS,
            vehicle,
            timestamp: report.timestamp,
        }
    }

    pub fn vehicle_id(&self) -> u32 {
        self.vehicle.vehicle_id
    }
}

/// A loaded schedule with the indexes matching needs. Immutable once built.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub gtfs: GtfsData,
    pub trip_tree: TripIntervalTree,
    pub projection: Equirectangular<f64>,
    pub utc_offset: UtcOffset,
    // one tree per trip over all of its stops, same order as gtfs.trips
    trip_stop_trees: Vec<StopNeighborTree<f64>>,
}

impl Schedule {
    pub fn new(gtfs: GtfsData, utc_offset: UtcOffset) -> Self {
        let projection = Equirectangular::new(gtfs.mean_latitude());
        let trip_tree = TripIntervalTree::build(&gtfs.trips);
        let trip_stop_trees = gtfs
            .trips
            .iter()
            .map(|trip| {
                StopNeighborTree::with_projection(stop_points(&gtfs, &trip.stop_times), projection)
                    .expect("trips always have stop times")
            })
            .collect();
        Self { gtfs, trip_tree, projection, utc_offset, trip_stop_trees }
    }

    pub fn trip_stop_tree(&self, trip: usize) -> &StopNeighborTree<f64> {
        &self.trip_stop_trees[trip]
    }
}

fn stop_points<'a>(
    gtfs: &'a GtfsData,
    stop_times: &'a [StopTime],
) -> impl Iterator<Item = (&'a str, f64, f64, u32)> + 'a {
    stop_times.iter().map(|st| {
        let stop = &gtfs.stops[st.stop_index];
        (stop.stop_id.as_str(), stop.latitude, stop.longitude, st.stop_sequence)
    })
}

/// Index range into `trip.stop_times` of the stops bracketing time `t`.
///
/// If `t` falls in one or more dwell windows (`arrival <= t <= departure`)
/// those stops are returned. Otherwise the range runs from the last stop
/// departed before `t` to the first stop arrived at after `t`. Times before
/// the trip clamp to the first stop, times after it to the last.
pub fn stops_between_range(trip: &TripSchedule, t: u32) -> RangeInclusive<usize> {
    let times = &trip.stop_times;
    let last = times.len() - 1;
    if t < times[0].arrival {
        return 0..=0;
    }
    if t > times[last].departure {
        return last..=last;
    }
    // times are non-decreasing, so both searches are binary
    let first_dwell = times.partition_point(|st| st.departure < t);
    let past_dwell = times.partition_point(|st| st.arrival <= t);
    if first_dwell < past_dwell {
        return first_dwell..=past_dwell - 1;
    }
    // no dwell contains t: first_dwell == past_dwell is the next arrival
    past_dwell - 1..=past_dwell
}

/// The `(stop_time)` slice of [`stops_between_range`].
pub fn stops_between(trip: &TripSchedule, t: u32) -> &[StopTime] {
    let r = stops_between_range(trip, t);
    &trip.stop_times[*r.start()..=*r.end()]
}

/// Matches a report against the schedule. Never fails: when no trip can be
/// determined the record carries only position and vehicle data (plus the
/// route, when the vehicle has one).
pub fn match_position(
    report: &PositionReport,
    vehicles: &VehicleMap,
    schedule: &Schedule,
) -> VehiclePositionRecord {
    let vehicle = vehicles
        .get(&report.vehicle_id)
        .cloned()
        .unwrap_or_else(|| VehicleDescriptor::bare(report.vehicle_id));
    let route_id = vehicle.route_id.clone();
    let mut record = VehiclePositionRecord::minimal(report, vehicle);
    let Some(route_id) = route_id else {
        return record;
    };

    let gtfs = &schedule.gtfs;
    let t = seconds_since_midnight(report.timestamp, schedule.utc_offset);
    let candidates: Vec<TripHit> = schedule
        .trip_tree
        .stab(t)
        .into_iter()
        .filter(|hit| gtfs.trips[hit.trip].route_id == route_id)
        .collect();
    record.route_id = Some(route_id);
    let Some(first) = candidates.first() else {
        return record;
    };

    let (lat, lon) = (report.latitude as f64, report.longitude as f64);
    let first_id = &gtfs.trips[first.trip].trip_id;
    let chosen = if candidates.iter().all(|c| &gtfs.trips[c.trip].trip_id == first_id) {
        *first
    } else {
        // candidates arrive in trip_id order; strict `<` keeps the smaller id on ties
        let mut best: Option<(f64, TripHit)> = None;
        for hit in &candidates {
            let near = stops_between(&gtfs.trips[hit.trip], hit.time);
            let tree = StopNeighborTree::with_projection(stop_points(gtfs, near), schedule.projection)
                .expect("stops_between is never empty");
            let d = tree.nearest(lat, lon).planar_distance;
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, *hit));
            }
        }
        best.expect("at least one candidate").1
    };

    let trip = &gtfs.trips[chosen.trip];
    record.trip_id = Some(trip.trip_id.clone());

    let nearest = schedule.trip_stop_tree(chosen.trip).nearest(lat, lon);
    let nearest_st = trip
        .stop_times
        .iter()
        .find(|st| st.stop_sequence == nearest.stop_sequence)
        .expect("tree built from this trip");
    let stop = &gtfs.stops[nearest_st.stop_index];
    let distance = haversine_m((lat, lon), (stop.latitude, stop.longitude));

    if distance <= STOP_ATTACH_RADIUS_M {
        record.stop = Some(StopAttachment {
            stop_id: nearest.stop_id,
            stop_sequence: nearest.stop_sequence,
        });
        record.current_status = if report.speed == 0.0 {
            StopStatus::StoppedAt
        } else {
            StopStatus::InTransitTo
        };
    } else {
        let here = schedule.projection.project(lat, lon);
        let upcoming = trip
            .stop_times
            .iter()
            .filter(|st| st.arrival >= chosen.time)
            .map(|st| {
                let s = &gtfs.stops[st.stop_index];
                let d = planar_dist2(schedule.projection.project(s.latitude, s.longitude), here);
                (d, s.stop_id.as_str(), st.stop_sequence)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        record.stop = Some(match upcoming {
            Some((_, stop_id, stop_sequence)) => StopAttachment { stop_id: stop_id.to_owned(), stop_sequence },
            None => StopAttachment { stop_id: nearest.stop_id, stop_sequence: nearest.stop_sequence },
        });
        record.current_status = StopStatus::InTransitTo;
    }
    record
}
