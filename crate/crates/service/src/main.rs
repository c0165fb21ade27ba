use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use rtfeed_core::gtfs::local_midnight;
use rtfeed_core::{load_gtfs, UtcOffset};
use rtfeed_service::{startup, unix_now, ConfigPairs};
use rtfeed_sim::{emit, generate_trace, load_plan_file, merge_traces, SimPlan, SpeedProfile, DEFAULT_CADENCE_MS};

#[derive(Parser)]
#[command(name = "rtfeed", version, about = "GTFS-realtime vehicle positions server and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ingest service.
    Serve(ServeArgs),
    /// Load a GTFS directory or zip and print a summary.
    ValidateGtfs { path: PathBuf },
    /// Replay scheduled trips as sensor packets.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct ServeArgs {
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    udp_bind: Option<String>,
    #[arg(long)]
    http_bind: Option<String>,
    #[arg(long)]
    gtfs_path: Option<String>,
    #[arg(long)]
    vehicle_map_path: Option<String>,
    /// Minutes east of UTC.
    #[arg(long, allow_hyphen_values = true)]
    agency_utc_offset: Option<String>,
    #[arg(long)]
    feed_ttl: Option<String>,
    #[arg(long)]
    queue_capacity: Option<String>,
    #[arg(long)]
    node_id: Option<String>,
    /// Comma-separated `id@host:port`.
    #[arg(long)]
    peers: Option<String>,
    #[arg(long)]
    raft_bind: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    replication_enabled: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    gtfs: PathBuf,
    /// host:port of the ingest socket.
    #[arg(long)]
    target: String,
    #[arg(long, required_unless_present = "plan")]
    trip: Option<String>,
    #[arg(long, required_unless_present = "plan")]
    vehicle: Option<u32>,
    /// CSV of vehicles to run together, instead of --trip/--vehicle.
    #[arg(long, conflicts_with_all = ["trip", "vehicle"])]
    plan: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_CADENCE_MS)]
    cadence_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    jitter_m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall seconds per simulated second; 0 sends without pacing.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// scheduled, constant:<kmh> or stop-and-go.
    #[arg(long, default_value = "scheduled")]
    profile: SpeedProfile,
    /// Seconds into the trip to start from.
    #[arg(long, default_value_t = 0.0)]
    start_offset: f64,
    /// Service day the timestamps belong to; defaults to today.
    #[arg(long)]
    service_day: Option<NaiveDate>,
    /// Agency offset in minutes east of UTC.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    utc_offset_min: i32,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Serve(args) => serve(args),
        Command::ValidateGtfs { path } => Ok(validate_gtfs(&path)),
        Command::Simulate(args) => simulate(args),
    }
}

fn serve(args: ServeArgs) -> Result<ExitCode> {
    let mut pairs = match &args.config {
        Some(path) => ConfigPairs::load(path)?,
        None => ConfigPairs::default(),
    };
    let overrides = [
        ("udp_bind", args.udp_bind),
        ("http_bind", args.http_bind),
        ("gtfs_path", args.gtfs_path),
        ("vehicle_map_path", args.vehicle_map_path),
        ("agency_utc_offset", args.agency_utc_offset),
        ("feed_ttl", args.feed_ttl),
        ("queue_capacity", args.queue_capacity),
        ("node_id", args.node_id),
        ("peers", args.peers),
        ("raft_bind", args.raft_bind),
        ("data_dir", args.data_dir),
        ("replication_enabled", args.replication_enabled),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            pairs.set(key, v)?;
        }
    }
    let config = pairs.build().context("invalid configuration")?;
    let handle = startup(config)?;
    handle.wait();
    Ok(ExitCode::SUCCESS)
}

fn validate_gtfs(path: &PathBuf) -> ExitCode {
    match load_gtfs(path) {
        Ok(gtfs) => {
            println!("{}: ok", path.display());
            println!("stops {}", gtfs.stops.len());
            println!("trips {}", gtfs.trips.len());
            println!("stop_times {}", gtfs.stop_time_count());
            ExitCode::SUCCESS
        }
        Err(e) => {
            println!("{}: {e}", path.display());
            ExitCode::FAILURE
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let Some(offset) = UtcOffset::minutes(args.utc_offset_min) else {
        bail!("UTC offset {} minutes is out of range", args.utc_offset_min);
    };
    let midnight = match args.service_day {
        Some(day) => {
            let utc = day.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp();
            u64::try_from(utc - offset.seconds()).context("service day before 1970")?
        }
        None => local_midnight(unix_now(), offset),
    };
    let gtfs = load_gtfs(&args.gtfs).with_context(|| format!("loading {}", args.gtfs.display()))?;
    let plans = match &args.plan {
        Some(path) => load_plan_file(path)?,
        None => vec![SimPlan {
            vehicle_id: args.vehicle.expect("required by clap"),
            trip_id: args.trip.clone().expect("required by clap"),
            start_offset: args.start_offset,
            cadence_ms: args.cadence_ms,
            profile: args.profile,
            jitter_m: args.jitter_m,
            seed: args.seed,
        }],
    };
    let traces = plans.iter().map(|p| generate_trace(p, &gtfs, midnight)).collect::<Result<Vec<_>, _>>()?;
    let trace = merge_traces(traces);
    log::info!("sending {} reports for {} vehicles to {}", trace.len(), plans.len(), args.target);
    let summary = emit(&trace, args.target.as_str(), args.time_scale)?;
    println!("sent {} failed {}", summary.sent, summary.failed);
    if let Some(e) = summary.last_error {
        log::warn!("last send error: {e}");
    }
    Ok(if summary.failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
