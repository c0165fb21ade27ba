use std::fs;
use std::io::Write;

use chrono::{FixedOffset, TimeZone, Timelike};
use rtfeed_core::gtfs::{load_gtfs, seconds_since_midnight, UtcOffset};
use rtfeed_testkit::small_fixture;

#[derive(Debug, PartialEq)]
enum Expect {
    Stop(String, f64, f64),
    Trip(String, String, u32, u32),
    StopTime(String, u32, String, u32, u32),
}

fn expectations() -> Vec<Expect> {
    let text = fs::read_to_string(small_fixture().join("expected.txt")).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f[0] {
                "stop" => Expect::Stop(f[1].into(), f[2].parse().unwrap(), f[3].parse().unwrap()),
                "trip" => Expect::Trip(f[1].into(), f[2].into(), f[3].parse().unwrap(), f[4].parse().unwrap()),
                "st" => Expect::StopTime(
                    f[1].into(),
                    f[2].parse().unwrap(),
                    f[3].into(),
                    f[4].parse().unwrap(),
                    f[5].parse().unwrap(),
                ),
                other => panic!("unknown expectation {other}"),
            }
        })
        .collect()
}

fn loaded_as_expectations(data: &rtfeed_core::GtfsData) -> Vec<Expect> {
    let mut out: Vec<Expect> = data
        .stops
        .iter()
        .map(|s| Expect::Stop(s.stop_id.clone(), s.latitude, s.longitude))
        .collect();
    for t in &data.trips {
        out.push(Expect::Trip(t.trip_id.clone(), t.route_id.clone(), t.span_start(), t.span_end()));
    }
    for t in &data.trips {
        for st in &t.stop_times {
            assert_eq!(data.stops[st.stop_index].stop_id, st.stop_id);
            out.push(Expect::StopTime(t.trip_id.clone(), st.stop_sequence, st.stop_id.clone(), st.arrival, st.departure));
        }
    }
    out
}

#[test]
fn fixture_matches_hand_transcription() {
    let data = load_gtfs(small_fixture()).unwrap();
    assert_eq!(loaded_as_expectations(&data), expectations());
}

#[test]
fn load_is_deterministic() {
    assert_eq!(load_gtfs(small_fixture()).unwrap(), load_gtfs(small_fixture()).unwrap());
}

#[test]
fn zip_archive_loads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feed.zip");
    let mut zip = zip::ZipWriter::new(fs::File::create(&path).unwrap());
    for name in ["stops.txt", "trips.txt", "stop_times.txt", "routes.txt"] {
        zip.start_file(format!("gtfs/{name}"), zip::write::SimpleFileOptions::default())
            .unwrap();
        zip.write_all(&fs::read(small_fixture().join(name)).unwrap()).unwrap();
    }
    zip.finish().unwrap();
    assert_eq!(load_gtfs(&path).unwrap(), load_gtfs(small_fixture()).unwrap());
}

#[test]
fn not_a_zip_is_an_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    fs::write(file.path(), b"definitely not a zip").unwrap();
    assert!(load_gtfs(file.path()).is_err());
}

#[test]
fn seconds_since_midnight_agrees_with_civil_time() {
    for (ts, minutes) in [(1_700_000_000u64, -480), (1_700_000_000, 0), (1_234_567_890, 330), (86_399, -840), (1, 840)] {
        let tz = FixedOffset::east_opt(minutes * 60).unwrap();
        let civil = tz.timestamp_opt(ts as i64, 0).unwrap();
        let expected = civil.num_seconds_from_midnight();
        let offset = UtcOffset::minutes(minutes).unwrap();
        assert_eq!(seconds_since_midnight(ts, offset), expected, "{ts} {minutes}");
        assert_eq!(seconds_since_midnight(ts + 86_400, offset), expected);
    }
    // 1700000000 at UTC-8 is 14:13:20 local
    assert_eq!(seconds_since_midnight(1_700_000_000, UtcOffset(-480)), 51_200);
}

#[test]
fn seconds_since_midnight_monotone_within_day() {
    let offset = UtcOffset(-420);
    let midnight = rtfeed_core::gtfs::local_midnight(1_700_000_000, offset);
    let mut prev = 0;
    for s in (0..86_400).step_by(37) {
        let v = seconds_since_midnight(midnight + s, offset);
        assert!(v >= prev);
        assert_eq!(v as u64, s);
        prev = v;
    }
}
