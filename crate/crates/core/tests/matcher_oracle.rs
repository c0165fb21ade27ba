use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtfeed_core::gtfs::{local_midnight, UtcOffset};
use rtfeed_core::matcher::{match_position, stops_between, Schedule, StopStatus};
use rtfeed_testkit::{oracle, random};

#[test]
fn stops_between_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gtfs = random::schedule(&mut rng, 50, 100, 3);
    for trip in &gtfs.trips {
        for t in trip.span_start().saturating_sub(100)..=trip.span_end() + 100 {
            let got: Vec<u32> = stops_between(trip, t).iter().map(|s| s.stop_sequence).collect();
            let want: Vec<u32> = oracle::stops_between(trip, t)
                .into_iter()
                .map(|k| trip.stop_times[k].stop_sequence)
                .collect();
            assert_eq!(got, want, "trip {} t {t}", trip.trip_id);
        }
    }
}

#[test]
fn match_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut attached = 0;
    let mut stopped = 0;
    for _ in 0..40 {
        let n_trips = rng.gen_range(1..=50);
        let n_stops = rng.gen_range(2..=200);
        let gtfs = random::schedule(&mut rng, n_trips, n_stops, 3);
        let vehicles = random::vehicles(&mut rng, 12, 3);
        let minutes = rng.gen_range(-840..=840);
        let offset = UtcOffset::minutes(minutes).unwrap();
        let midnight = local_midnight(1_700_000_000, offset);
        let schedule = Schedule::new(gtfs.clone(), offset);
        for _ in 0..50 {
            let r = random::report(&mut rng, &gtfs, &vehicles, midnight);
            let got = match_position(&r, &vehicles, &schedule);
            let want = oracle::match_report(&r, &vehicles, &gtfs, minutes);
            assert_eq!(got.route_id, want.route_id);
            assert_eq!(got.trip_id, want.trip_id);
            assert_eq!(got.stop.as_ref().map(|s| (s.stop_id.clone(), s.stop_sequence)), want.stop);
            assert_eq!(got.current_status, want.status);
            if got.route_id.is_none() {
                assert!(got.trip_id.is_none() && got.stop.is_none());
            }
            if got.current_status == StopStatus::StoppedAt {
                stopped += 1;
                assert_eq!(r.speed, 0.0);
            }
            if got.stop.is_some() {
                attached += 1;
            }
            assert_eq!(got.speed, r.speed as f64 / 3.6);
        }
    }
    assert!(attached > 100 && stopped > 50, "scenarios too tame: {attached} {stopped}");
}
