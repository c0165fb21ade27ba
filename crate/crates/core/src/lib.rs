//! Core of the vehicle positions pipeline: decode sensor packets, index a
//! GTFS schedule, match positions to trips and encode the GTFS-RT feed.
//!
//! The geometry (`geo`, `kdtree`, `index::StopNeighborTree`) is generic over
//! the float type; the rest of the crate works in `f64` through the aliases
//! below. The interval tree is generic over any ordered key.

pub mod feed;
pub mod geo;
pub mod gtfs;
pub mod index;
pub mod interval;
pub mod kdtree;
pub mod matcher;
pub mod proto;
pub mod vehicles;
pub mod wire;

/// Scalar used for coordinates and distances throughout the pipeline.
pub type Real = f64;

/// Neighbour tree over stop coordinates at pipeline precision.
pub type StopTree = index::StopNeighborTree<Real>;
/// Stop lookup result at pipeline precision.
pub type StopMatch = index::StopMatch<Real>;
/// Planar projection at pipeline precision.
pub type Projection = geo::Equirectangular<Real>;

pub use feed::{encode_feed, FeedSnapshot};
pub use gtfs::{load_gtfs, GtfsData, GtfsError, Stop, StopTime, TripSchedule, UtcOffset};
pub use index::{TripHit, TripIntervalTree};
pub use matcher::{match_position, Schedule, StopAttachment, StopStatus, VehiclePositionRecord};
pub use vehicles::{load_vehicle_map, VehicleDescriptor, VehicleMap, WheelchairAccess};
pub use wire::{decode_packet, encode_packet, validate_report, PositionReport, Verdict, WireError};
