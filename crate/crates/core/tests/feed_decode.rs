use proptest::prelude::*;
use rtfeed_core::feed::{encode_feed, FeedSnapshot};
use rtfeed_core::matcher::{StopAttachment, StopStatus, VehiclePositionRecord};
use rtfeed_core::vehicles::VehicleDescriptor;
use rtfeed_testkit::{decode_feed, rt};

fn arb_record() -> impl Strategy<Value = VehiclePositionRecord> {
    (
        any::<u32>(),
        proptest::option::of("[A-Za-z0-9_]{1,8}"),
        proptest::option::of("[A-Z0-9]{1,4}"),
        proptest::option::of(("[A-Z0-9]{1,6}", 0u32..1000)),
        0u8..3,
        (-90.0f32..90.0, -180.0f32..180.0, 0.0f32..360.0, 0.0f64..90.0),
        1u64..4_000_000_000,
        ("[a-z ]{0,6}", "[A-Z0-9]{0,7}"),
    )
        .prop_map(|(id, trip, route, stop, status, (lat, lon, bearing, speed), ts, (label, plate))| {
            let current_status = match (&stop, status) {
                (None, _) => StopStatus::Unknown,
                (Some(_), 0) => StopStatus::StoppedAt,
                (Some(_), _) => StopStatus::InTransitTo,
            };
            VehiclePositionRecord {
                trip_id: trip,
                route_id: route,
                stop: stop.map(|(stop_id, stop_sequence)| StopAttachment { stop_id, stop_sequence }),
                current_status,
                latitude: lat,
                longitude: lon,
                bearing,
                speed,
                vehicle: VehicleDescriptor { vehicle_id: id, label, license_plate: plate, ..Default::default() },
                timestamp: ts,
            }
        })
}

#[test]
fn empty_snapshot_has_header_only() {
    let msg = decode_feed(&encode_feed(&FeedSnapshot::new(1_700_000_000))).unwrap();
    assert_eq!(msg.header.gtfs_realtime_version, "2.0");
    assert_eq!(msg.header.incrementality(), rt::feed_header::Incrementality::FullDataset);
    assert_eq!(msg.header.timestamp, Some(1_700_000_000));
    assert!(msg.entity.is_empty());
}

proptest! {
    #[test]
    fn decoded_feed_reproduces_every_field(records in proptest::collection::vec(arb_record(), 0..8), now in 1u64..) {
        let mut snap = FeedSnapshot::new(now);
        for r in &records {
            snap.apply_record(r.clone(), now);
        }
        let bytes = encode_feed(&snap);
        let msg = decode_feed(&bytes).unwrap();
        prop_assert_eq!(msg.entity.len(), snap.entities.len());
        for (entity, (id, r)) in msg.entity.iter().zip(&snap.entities) {
            prop_assert_eq!(&entity.id, &id.to_string());
            let vp = entity.vehicle.as_ref().unwrap();
            let trip = vp.trip.as_ref();
            prop_assert_eq!(trip.and_then(|t| t.trip_id.clone()), r.trip_id.clone());
            prop_assert_eq!(trip.and_then(|t| t.route_id.clone()), r.route_id.clone());
            let pos = vp.position.as_ref().unwrap();
            prop_assert_eq!(pos.latitude.to_bits(), r.latitude.to_bits());
            prop_assert_eq!(pos.longitude.to_bits(), r.longitude.to_bits());
            prop_assert_eq!(pos.bearing, Some(r.bearing));
            prop_assert_eq!(pos.speed, Some(r.speed as f32));
            prop_assert_eq!(pos.odometer, None);
            prop_assert_eq!(vp.stop_id.clone(), r.stop.as_ref().map(|s| s.stop_id.clone()));
            prop_assert_eq!(vp.current_stop_sequence, r.stop.as_ref().map(|s| s.stop_sequence));
            let status = match r.current_status {
                StopStatus::Unknown => None,
                StopStatus::StoppedAt => Some(rt::vehicle_position::VehicleStopStatus::StoppedAt as i32),
                StopStatus::InTransitTo => Some(rt::vehicle_position::VehicleStopStatus::InTransitTo as i32),
            };
            prop_assert_eq!(vp.current_status, status);
            prop_assert_eq!(vp.timestamp, Some(r.timestamp));
            let v = vp.vehicle.as_ref().unwrap();
            prop_assert_eq!(v.id.clone(), Some(id.to_string()));
            prop_assert_eq!(v.label.clone().unwrap_or_default(), r.vehicle.label.clone());
            prop_assert_eq!(v.license_plate.clone().unwrap_or_default(), r.vehicle.license_plate.clone());
        }
        // same content, same bytes
        prop_assert_eq!(encode_feed(&snap.clone()), bytes);
    }
}
