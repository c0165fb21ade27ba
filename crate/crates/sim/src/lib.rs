//! Emulates the on-vehicle firmware: follows a scheduled trip, produces a
//! position report every `cadence_ms`, and sends each as one UDP datagram.

use std::io;
use std::net::{ToSocketAddrs, UdpSocket};
use std::path::Path;
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use rtfeed_core::geo::{haversine_m, initial_bearing_deg, offset_m};
use rtfeed_core::gtfs::{GtfsData, TripSchedule};
use rtfeed_core::wire::{encode_packet, PositionReport};

pub const DEFAULT_CADENCE_MS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedProfile {
    /// Follow stop_times: straight lines between stops, stopped during dwells.
    Scheduled,
    /// Constant speed along the stop polyline, no dwells, until the last stop.
    Constant { kmh: f64 },
    /// Scheduled dwells; within a segment the vehicle accelerates from and
    /// brakes to rest (smooth-step progress).
    StopAndGo,
}

impl FromStr for SpeedProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "scheduled" => Ok(SpeedProfile::Scheduled),
            "stop-and-go" => Ok(SpeedProfile::StopAndGo),
            other => {
                let kmh = other
                    .strip_prefix("constant:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown speed profile `{other}`"))?;
                if !(kmh > 0.0 && kmh <= 300.0) {
                    return Err(format!("constant speed {kmh} km/h outside (0, 300]"));
                }
                Ok(SpeedProfile::Constant { kmh })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPlan {
    pub vehicle_id: u32,
    pub trip_id: String,
    /// Seconds after the trip's first departure at which the trace starts.
    pub start_offset: f64,
    pub cadence_ms: u64,
    pub profile: SpeedProfile,
    /// Standard deviation of Gaussian position noise, meters.
    pub jitter_m: f64,
    pub seed: u64,
}

impl SimPlan {
    pub fn new(vehicle_id: u32, trip_id: impl Into<String>) -> Self {
        Self {
            vehicle_id,
            trip_id: trip_id.into(),
            start_offset: 0.0,
            cadence_ms: DEFAULT_CADENCE_MS,
            profile: SpeedProfile::Scheduled,
            jitter_m: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.cadence_ms == 0 {
            return Err(SimError::InvalidPlan("cadence must be positive".into()));
        }
        if !(self.jitter_m >= 0.0 && self.jitter_m.is_finite()) {
            return Err(SimError::InvalidPlan(format!("jitter {} must be a non-negative number", self.jitter_m)));
        }
        if !(self.start_offset >= 0.0 && self.start_offset.is_finite()) {
            return Err(SimError::InvalidPlan(format!("start offset {} must be non-negative", self.start_offset)));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown trip `{0}`")]
    UnknownTrip(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("plan file line {line}: {message}")]
    PlanFile { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A report and when to send it, relative to the start of the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedReport {
    pub at_ms: u64,
    pub report: PositionReport,
}

struct Kinematics {
    lat: f64,
    lon: f64,
    /// km/h
    speed: f64,
    toward: (f64, f64),
}

fn lerp(a: (f64, f64), b: (f64, f64), u: f64) -> (f64, f64) {
    (a.0 + (b.0 - a.0) * u, a.1 + (b.1 - a.1) * u)
}

fn coords(gtfs: &GtfsData, trip: &TripSchedule) -> Vec<(f64, f64)> {
    trip.stop_times
        .iter()
        .map(|st| {
            let s = &gtfs.stops[st.stop_index];
            (s.latitude, s.longitude)
        })
        .collect()
}

/// State at schedule time `t` (seconds since service-day midnight), or
/// `None` once past the last arrival.
fn scheduled_state(trip: &TripSchedule, pts: &[(f64, f64)], t: f64, smooth: bool) -> Option<Kinematics> {
    let st = &trip.stop_times;
    let last = st.len() - 1;
    if t > st[last].arrival as f64 {
        return None;
    }
    let next_of = |i: usize| pts[(i + 1).min(last)];
    for (i, s) in st.iter().enumerate() {
        if s.arrival as f64 <= t && t <= s.departure as f64 || (i == 0 && t <= s.departure as f64) {
            return Some(Kinematics { lat: pts[i].0, lon: pts[i].1, speed: 0.0, toward: next_of(i) });
        }
    }
    let i = st.iter().rposition(|s| (s.departure as f64) < t).expect("t after the first departure");
    let (dep, arr) = (st[i].departure as f64, st[i + 1].arrival as f64);
    let dur = arr - dep;
    let u = (t - dep) / dur;
    let seg_m = haversine_m(pts[i], pts[i + 1]);
    let (progress, mps) = if smooth {
        (u * u * (3.0 - 2.0 * u), seg_m / dur * 6.0 * u * (1.0 - u))
    } else {
        (u, seg_m / dur)
    };
    let (lat, lon) = lerp(pts[i], pts[i + 1], progress);
    Some(Kinematics { lat, lon, speed: mps * 3.6, toward: pts[i + 1] })
}

/// State after travelling `dist` meters along the polyline, or `None`
/// beyond its end.
fn constant_state(pts: &[(f64, f64)], dist: f64, kmh: f64) -> Option<Kinematics> {
    let mut walked = 0.0;
    for w in pts.windows(2) {
        let seg = haversine_m(w[0], w[1]);
        if dist <= walked + seg && seg > 0.0 {
            let (lat, lon) = lerp(w[0], w[1], (dist - walked) / seg);
            return Some(Kinematics { lat, lon, speed: kmh, toward: w[1] });
        }
        walked += seg;
    }
    (dist <= walked).then(|| {
        let end = *pts.last().unwrap();
        Kinematics { lat: end.0, lon: end.1, speed: kmh, toward: end }
    })
}

/// Reports along the plan's trip from `start_offset` to the last arrival,
/// one per `cadence_ms`. Timestamps are `service_midnight` (the Unix time of
/// local midnight on the service day) plus the whole seconds of schedule time.
pub fn generate_trace(plan: &SimPlan, gtfs: &GtfsData, service_midnight: u64) -> Result<Vec<TimedReport>, SimError> {
    plan.validate()?;
    let trip = gtfs.trip(&plan.trip_id).ok_or_else(|| SimError::UnknownTrip(plan.trip_id.clone()))?;
    let pts = coords(gtfs, trip);
    let start = trip.span_start() as f64 + plan.start_offset;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let noise = Normal::new(0.0, plan.jitter_m).expect("validated jitter");

    let mut out = Vec::new();
    for k in 0u64.. {
        let at_ms = k * plan.cadence_ms;
        let elapsed = at_ms as f64 / 1000.0;
        let t = start + elapsed;
        let state = match plan.profile {
            SpeedProfile::Scheduled => scheduled_state(trip, &pts, t, false),
            SpeedProfile::StopAndGo => scheduled_state(trip, &pts, t, true),
            SpeedProfile::Constant { kmh } => constant_state(&pts, kmh / 3.6 * elapsed, kmh),
        };
        let Some(s) = state else { break };
        let here = if plan.jitter_m > 0.0 {
            offset_m((s.lat, s.lon), noise.sample(&mut rng), noise.sample(&mut rng))
        } else {
            (s.lat, s.lon)
        };
        let mut bearing = if s.toward == (s.lat, s.lon) {
            // at the final stop: keep the heading of the last leg
            let n = pts.len();
            if n >= 2 { initial_bearing_deg(pts[n - 2], pts[n - 1]) } else { 0.0 }
        } else {
            initial_bearing_deg((s.lat, s.lon), s.toward)
        } as f32;
        if bearing >= 360.0 {
            bearing = 0.0;
        }
        let report = PositionReport {
            latitude: here.0 as f32,
            longitude: here.1 as f32,
            bearing,
            speed: s.speed as f32,
            vehicle_id: plan.vehicle_id,
            timestamp: service_midnight + t.floor() as u64,
        };
        out.push(TimedReport { at_ms, report });
    }
    Ok(out)
}

/// Interleaves several traces by send time; ties keep argument order.
pub fn merge_traces(traces: Vec<Vec<TimedReport>>) -> Vec<TimedReport> {
    let mut all: Vec<TimedReport> = traces.into_iter().flatten().collect();
    all.sort_by_key(|r| r.at_ms);
    all
}

#[derive(Debug, Default)]
pub struct EmitSummary {
    pub sent: usize,
    pub failed: usize,
    pub last_error: Option<io::Error>,
}

/// Sends every report as a 28-byte datagram. Sends are paced at
/// `at_ms * time_scale`; 0 sends as fast as possible. Failed sends are
/// counted and skipped.
pub fn emit(trace: &[TimedReport], target: impl ToSocketAddrs, time_scale: f64) -> io::Result<EmitSummary> {
    let target = target
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "target resolves to no address"))?;
    let bind = if target.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket = UdpSocket::bind(bind)?;
    let began = Instant::now();
    let mut summary = EmitSummary::default();
    for item in trace {
        if time_scale > 0.0 {
            let due = Duration::from_secs_f64(item.at_ms as f64 / 1000.0 * time_scale);
            if let Some(wait) = due.checked_sub(began.elapsed()) {
                thread::sleep(wait);
            }
        }
        let bytes = match encode_packet(&item.report) {
            Ok(b) => b,
            Err(e) => {
                summary.failed += 1;
                summary.last_error = Some(io::Error::new(io::ErrorKind::InvalidData, e));
                continue;
            }
        };
        match socket.send_to(&bytes, target) {
            Ok(_) => summary.sent += 1,
            Err(e) => {
                summary.failed += 1;
                summary.last_error = Some(e);
            }
        }
    }
    Ok(summary)
}

#[derive(Debug, Deserialize)]
struct PlanRow {
    vehicle_id: u32,
    trip_id: String,
    start_offset: f64,
    cadence_ms: u64,
    profile: String,
    jitter_m: f64,
    seed: u64,
}

/// Parses a plan file: one vehicle per line,
/// `vehicle_id,trip_id,start_offset,cadence_ms,profile,jitter_m,seed`.
/// Blank lines and lines starting with `#` are skipped.
pub fn parse_plan_file(text: &str) -> Result<Vec<SimPlan>, SimError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut plans = Vec::new();
    for row in reader.deserialize::<PlanRow>() {
        let row = row.map_err(|e| SimError::PlanFile {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = plans.len() as u64 + 1;
        let profile = row.profile.parse().map_err(|message| SimError::PlanFile { line, message })?;
        let plan = SimPlan {
            vehicle_id: row.vehicle_id,
            trip_id: row.trip_id,
            start_offset: row.start_offset,
            cadence_ms: row.cadence_ms,
            profile,
            jitter_m: row.jitter_m,
            seed: row.seed,
        };
        plan.validate().map_err(|e| SimError::PlanFile { line, message: e.to_string() })?;
        plans.push(plan);
    }
    Ok(plans)
}

pub fn load_plan_file(path: impl AsRef<Path>) -> Result<Vec<SimPlan>, SimError> {
    parse_plan_file(&std::fs::read_to_string(path)?)
}
