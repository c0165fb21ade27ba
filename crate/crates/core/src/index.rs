//! Query structures over a loaded schedule: trip time spans in an interval
//! tree and stop coordinates in a planar neighbour tree.

use num_traits::Float;

use crate::geo::Equirectangular;
use crate::gtfs::{TripSchedule, SECONDS_PER_DAY};
use crate::interval::IntervalTree;
use crate::kdtree::{EmptyInput, NeighborTree};

/// A trip returned by a stabbing query, with the schedule time at which it
/// matched. `time` is the query time, or the query time plus one day for
/// trips stored with after-midnight times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripHit {
    /// Index into the trip list the tree was built from.
    pub trip: usize,
    pub time: u32,
}

/// Interval tree over `[span_start, span_end]` of each trip.
#[derive(Debug, Clone)]
pub struct TripIntervalTree {
    tree: IntervalTree<u32, usize>,
}

impl TripIntervalTree {
    /// Trips must be sorted by `trip_id` for query results to come back in
    /// `trip_id` order.
    pub fn build(trips: &[TripSchedule]) -> Self {
        let tree = IntervalTree::new(
            trips
                .iter()
                .enumerate()
                .map(|(i, t)| (t.span_start(), t.span_end(), i)),
        );
        Self { tree }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// All trips active at `t` seconds since midnight, probing both `t` and
    /// `t + 86400`. Sorted by trip index; a trip matching both probes is
    /// reported once, at `t`.
    pub fn stab(&self, t: u32) -> Vec<TripHit> {
        self.stab_counted(t).0
    }

    /// [`stab`](Self::stab) plus the number of tree nodes examined.
    pub fn stab_counted(&self, t: u32) -> (Vec<TripHit>, usize) {
        let (today, v1) = self.tree.stab_counted(t);
        let (tomorrow, v2) = self.tree.stab_counted(t + SECONDS_PER_DAY);
        let mut hits: Vec<TripHit> = today
            .into_iter()
            .map(|&trip| TripHit { trip, time: t })
            .chain(tomorrow.into_iter().map(|&trip| TripHit { trip, time: t + SECONDS_PER_DAY }))
            .collect();
        // stable sort keeps the `t` probe ahead of the `t + 86400` probe
        hits.sort_by_key(|h| h.trip);
        hits.dedup_by_key(|h| h.trip);
        (hits, v1 + v2)
    }
}

/// Payload stored per stop point. Field order gives the tie rule: smaller
/// `stop_id`, then smaller `stop_sequence`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StopKey {
    pub stop_id: String,
    pub stop_sequence: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopMatch<F> {
    pub stop_id: String,
    pub stop_sequence: u32,
    /// Planar distance in projected degree units.
    pub planar_distance: F,
}

/// Neighbour tree over projected stop coordinates.
#[derive(Debug, Clone)]
pub struct StopNeighborTree<F> {
    projection: Equirectangular<F>,
    tree: NeighborTree<F, StopKey>,
}

impl<F: Float> StopNeighborTree<F> {
    /// `stops` yields `(stop_id, latitude, longitude, stop_sequence)`.
    pub fn build<'a>(
        stops: impl IntoIterator<Item = (&'a str, F, F, u32)>,
        reference_latitude: F,
    ) -> Result<Self, EmptyInput> {
        let projection = Equirectangular::new(reference_latitude);
        Self::with_projection(stops, projection)
    }

    pub fn with_projection<'a>(
        stops: impl IntoIterator<Item = (&'a str, F, F, u32)>,
        projection: Equirectangular<F>,
    ) -> Result<Self, EmptyInput> {
        let points = stops
            .into_iter()
            .map(|(id, lat, lon, seq)| {
                (projection.project(lat, lon), StopKey { stop_id: id.to_owned(), stop_sequence: seq })
            })
            .collect();
        Ok(Self { projection, tree: NeighborTree::new(points)? })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn nearest(&self, latitude: F, longitude: F) -> StopMatch<F> {
        let hit = self.tree.nearest(self.projection.project(latitude, longitude));
        StopMatch {
            stop_id: hit.payload.stop_id.clone(),
            stop_sequence: hit.payload.stop_sequence,
            planar_distance: hit.dist2.sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gtfs::StopTime;

    fn trip(id: &str, start: u32, end: u32) -> TripSchedule {
        let st = |t| StopTime { stop_id: "s".into(), stop_index: 0, arrival: t, departure: t, stop_sequence: t };
        TripSchedule { trip_id: id.into(), route_id: "r".into(), stop_times: vec![st(start), st(end)] }
    }

    #[test]
    fn after_midnight_trip_found_early_morning() {
        let trips = vec![trip("a", 90_000, 91_800), trip("b", 3_000, 4_000)];
        let tree = TripIntervalTree::build(&trips);
        assert_eq!(
            tree.stab(3_600),
            vec![TripHit { trip: 0, time: 90_000 }, TripHit { trip: 1, time: 3_600 }]
        );
        assert!(tree.stab(50_000).is_empty());
    }

    #[test]
    fn universal_trip_and_bounds() {
        let trips = vec![trip("all", 0, 86_400), trip("x", 100, 200)];
        let tree = TripIntervalTree::build(&trips);
        for t in [0, 1, 43_200, 86_399] {
            assert!(tree.stab(t).iter().any(|h| h.trip == 0 && h.time == t));
        }
        assert!(tree.stab(100).iter().any(|h| h.trip == 1));
        assert!(tree.stab(200).iter().any(|h| h.trip == 1));
        assert!(!tree.stab(201).iter().any(|h| h.trip == 1));
        // [0, 86400] also contains t + 86400 for t = 0; reported once at t
        assert_eq!(tree.stab(0), vec![TripHit { trip: 0, time: 0 }]);
    }

    #[test]
    fn empty_tree() {
        let tree = TripIntervalTree::build(&[]);
        assert!(tree.is_empty());
        assert!(tree.stab(0).is_empty());
    }

    #[test]
    fn stop_tree_tie_and_exact() {
        let tree = StopNeighborTree::build(
            [("B", 34.0, -118.001, 1), ("A", 34.0, -117.999, 2)],
            34.0,
        )
        .unwrap();
        let m = tree.nearest(34.0, -118.0);
        assert_eq!(m.stop_id, "A");
        let m = tree.nearest(34.0, -118.001);
        assert_eq!((m.stop_id.as_str(), m.stop_sequence, m.planar_distance), ("B", 1, 0.0));
    }

    #[test]
    fn same_stop_twice_prefers_lower_sequence() {
        let tree = StopNeighborTree::build([("L", 1.0f64, 1.0, 9), ("L", 1.0, 1.0, 3)], 1.0).unwrap();
        assert_eq!(tree.nearest(1.0, 1.0).stop_sequence, 3);
    }
}
