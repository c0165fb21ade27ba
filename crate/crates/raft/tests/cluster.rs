use std::sync::Arc;

use rtfeed_core::feed::encode_feed;
use rtfeed_core::gtfs::{load_gtfs, UtcOffset};
use rtfeed_core::matcher::{Schedule, StopStatus};
use rtfeed_core::vehicles::load_vehicle_map;
use rtfeed_core::wire::{encode_packet, PositionReport};
use rtfeed_raft::node::Role;
use rtfeed_raft::sim::TraceKind;
use rtfeed_raft::{
    apply_committed, chaos_script, simulate_cluster, ChaosPlan, FeedStateMachine, LogEntry, MemStorage, RaftConfig,
    RaftNode, Scenario, SimEnv, Trace,
};
use rtfeed_testkit::small_fixture;

// 2023-11-14 00:00:00 UTC; fixture times are read at UTC
const MIDNIGHT: u64 = 1_699_920_000;

fn env() -> SimEnv {
    let gtfs = load_gtfs(small_fixture()).unwrap();
    SimEnv {
        schedule: Arc::new(Schedule::new(gtfs, UtcOffset(0))),
        vehicles: Arc::new(load_vehicle_map(small_fixture().join("vehicles.csv")).unwrap()),
    }
}

/// Vehicle 7 on route R1 at stop S1 (T1's first stop) during its dwell.
fn report(k: u64) -> PositionReport {
    PositionReport {
        latitude: 34.05,
        longitude: -118.25,
        bearing: 90.0,
        speed: 0.0,
        vehicle_id: 7,
        timestamp: MIDNIGHT + 28_800 + k,
    }
}

fn propose_line(t: u64, r: &PositionReport) -> String {
    format!("{t} propose {} {} {} {} {} {}\n", r.vehicle_id, r.latitude, r.longitude, r.bearing, r.speed, r.timestamp)
}

fn run(text: &str) -> Trace {
    let trace = simulate_cluster(&Scenario::parse(text).unwrap(), env());
    assert!(trace.violations.is_empty(), "{trace}");
    trace
}

fn leader_at_end(trace: &Trace) -> u64 {
    let leaders: Vec<_> = trace.live_nodes().filter(|n| n.role == Role::Leader).collect();
    assert_eq!(leaders.len(), 1, "{trace}");
    leaders[0].id
}

#[test]
fn fresh_cluster_elects_one_leader() {
    let trace = run("nodes 3\nseed 1\n2000 end\n");
    let leader = leader_at_end(&trace);
    // both peers granted the first vote
    assert_eq!(trace.leaders.len(), 1, "{trace}");
    assert_eq!(trace.leaders.get(&1), Some(&leader), "{trace}");
    for n in &trace.nodes {
        assert_eq!(n.term, 1);
        // the leader's no-op is committed everywhere
        assert_eq!(n.commit_index, 1);
    }
}

#[test]
fn proposal_commits_on_all_three() {
    let mut text = "nodes 3\nseed 1\n".to_string();
    text += &propose_line(1_000, &report(5));
    text += "2000 end\n";
    let trace = run(&text);
    let p = &trace.proposals[0];
    let (_, index, term) = p.accepted.unwrap();
    // hand-computed: no-op at 1, the report at 2, all in term 1
    assert_eq!((index, term), (2, 1));
    assert!(trace.is_committed(p));
    for n in &trace.nodes {
        assert_eq!((n.commit_index, n.last_index, n.applied_index), (2, 2, 2), "{trace}");
    }
    assert!(trace.feeds_converged());
    let feed = rtfeed_testkit::decode_feed(&trace.nodes[0].feed).unwrap();
    assert_eq!(feed.entity.len(), 1);
    let vp = feed.entity[0].vehicle.as_ref().unwrap();
    assert_eq!(vp.trip.as_ref().unwrap().trip_id(), "T1");
    assert_eq!(vp.stop_id(), "S1");
    assert_eq!(feed.header.timestamp(), MIDNIGHT + 28_805);
}

#[test]
fn propose_to_follower_is_redirected() {
    let probe = run("nodes 3\nseed 1\n1000 end\n");
    let leader = leader_at_end(&probe);
    let follower = (1..=3).find(|&id| id != leader).unwrap();
    let r = report(1);
    let text = format!(
        "nodes 3\nseed 1\n1000 propose-to {follower} {} {} {} {} {} {}\n2000 end\n",
        r.vehicle_id, r.latitude, r.longitude, r.bearing, r.speed, r.timestamp
    );
    let trace = run(&text);
    let redirect = trace.events.iter().find(|e| matches!(e.kind, TraceKind::Redirect { .. })).unwrap();
    assert_eq!(redirect.node, Some(follower));
    assert_eq!(redirect.kind, TraceKind::Redirect { hint: Some(leader) });
    assert_eq!(trace.proposals[0].accepted.map(|a| a.0), Some(leader));
    assert!(trace.is_committed(&trace.proposals[0]));
}

#[test]
fn committed_entry_survives_leader_crash() {
    let mut text = "nodes 3\nseed 2\n".to_string();
    text += &propose_line(1_000, &report(1));
    let probe = run(&(text.clone() + "1400 end\n"));
    let old = leader_at_end(&probe);
    assert!(probe.is_committed(&probe.proposals[0]));

    text += &format!("1500 crash {old}\n");
    text += &propose_line(2_500, &report(2));
    text += "4000 end\n";
    let trace = run(&text);
    let new = leader_at_end(&trace);
    assert_ne!(new, old);
    let summary = trace.nodes.iter().find(|n| n.id == new).unwrap();
    assert!(summary.term > 1);
    let (_, index, _) = trace.proposals[0].accepted.unwrap();
    assert!(trace.is_committed(&trace.proposals[0]));
    assert!(trace.is_committed(&trace.proposals[1]), "{trace}");
    // both survivors applied both reports; the feed keeps the newer one
    let live: Vec<_> = trace.live_nodes().collect();
    assert_eq!(live.len(), 2);
    assert!(live.iter().all(|n| n.applied_index > index));
    assert!(trace.feeds_converged());
}

#[test]
fn isolated_leader_never_commits() {
    let probe = run("nodes 3\nseed 3\n1000 end\n");
    let old = leader_at_end(&probe);
    let others: Vec<String> = (1..=3).filter(|&i| i != old).map(|i| i.to_string()).collect();
    let r = report(1);
    let mut text = format!("nodes 3\nseed 3\n1000 partition {old} {}\n", others.join(","));
    text += &format!(
        "1010 propose-to {old} {} {} {} {} {} {}\n",
        r.vehicle_id, r.latitude, r.longitude, r.bearing, r.speed, r.timestamp
    );
    text += &propose_line(1_500, &report(2));
    text += "3000 heal\n5000 end\n";
    let trace = run(&text);

    let stranded = &trace.proposals[0];
    assert_eq!(stranded.accepted.map(|a| a.0), Some(old));
    let commits_while_cut = trace
        .events
        .iter()
        .filter(|e| e.node == Some(old) && (1_000..3_000).contains(&e.time))
        .filter(|e| matches!(e.kind, TraceKind::Commit { .. }))
        .count();
    assert_eq!(commits_while_cut, 0, "{trace}");
    // the majority elected someone else and committed the second report
    assert!(trace.leaders.values().any(|&l| l != old));
    assert!(trace.is_committed(&trace.proposals[1]));
    // the stranded entry was overwritten after heal
    assert!(!trace.is_committed(stranded));
    assert!(trace.feeds_converged(), "{trace}");
}

#[test]
fn three_nodes_with_one_down_still_commit() {
    let mut text = "nodes 3\nseed 4\n0 crash 3\n".to_string();
    for k in 0..5 {
        text += &propose_line(500 + k * 100, &report(k));
    }
    text += "3000 end\n";
    let trace = run(&text);
    assert!(trace.proposals.iter().all(|p| trace.is_committed(p)), "{trace}");
}

#[test]
fn no_fault_runs_elect_once_and_commit_everything() {
    for seed in 0..100 {
        let mut text = format!("nodes 3\nseed {seed}\n");
        for k in 0..10 {
            text += &propose_line(200 + k * 150, &report(k));
        }
        text += "3000 end\n";
        let trace = run(&text);
        assert_eq!(trace.leaders.len(), 1, "seed {seed}\n{trace}");
        assert!(trace.proposals.iter().all(|p| trace.is_committed(p)), "seed {seed}\n{trace}");
        assert!(trace.feeds_converged());
    }
}

#[test]
fn runs_are_deterministic() {
    let plan = ChaosPlan { nodes: 5, seed: 11, fault_window_ms: 3_000, quiesce_ms: 2_000, crashes: 3, partitions: 2, loss: 0.05 };
    let reports: Vec<_> = (0..20).map(report).collect();
    let text = chaos_script(&plan, &reports);
    let a = run(&text);
    let b = run(&text);
    assert_eq!(a.to_string(), b.to_string());
    let c = run(&text.replace("seed 11", "seed 12"));
    assert_ne!(a.to_string(), c.to_string());
}

#[test]
fn chaos_runs_are_safe_and_converge() {
    let reports: Vec<_> = (0..15).map(report).collect();
    for seed in 0..10 {
        for nodes in [3, 5] {
            let plan = ChaosPlan { nodes, seed, fault_window_ms: 3_000, quiesce_ms: 2_000, crashes: 3, partitions: 2, loss: 0.05 };
            let trace = run(&chaos_script(&plan, &reports));
            assert!(trace.feeds_converged(), "{trace}");
            let live = trace.live_nodes().count();
            assert_eq!(live, nodes);
        }
    }
}

fn entry(index: u64, command: Vec<u8>) -> LogEntry {
    LogEntry { term: 1, index, command }
}

#[test]
fn apply_committed_in_order() {
    let e = env();
    let mut node = RaftNode::new(RaftConfig::new(1, vec![], 0), MemStorage::new(), 0).unwrap();
    let mut sm = FeedStateMachine::new(e.schedule.clone(), e.vehicles.clone());
    assert_eq!(apply_committed(&mut node, &mut sm), 0);

    node.tick(1_000).unwrap();
    // vehicle 7 moves from S1 to S2; vehicle 8 has no active trip at that hour
    let s2 = PositionReport { longitude: -118.245, speed: 20.0, ..report(400) };
    let other = PositionReport { vehicle_id: 8, ..report(401) };
    for r in [report(10), s2, other] {
        node.propose(encode_packet(&r).unwrap().to_vec()).unwrap();
    }
    // no-op plus three reports
    assert_eq!(apply_committed(&mut node, &mut sm), 4);
    assert_eq!(apply_committed(&mut node, &mut sm), 0);
    let feed = sm.feed();
    assert_eq!(feed.len(), 2);
    let seven = &feed.entities[&7];
    assert_eq!(seven.timestamp, MIDNIGHT + 28_800 + 400);
    assert_eq!(seven.stop.as_ref().unwrap().stop_id, "S2");
    assert_eq!(seven.current_status, StopStatus::InTransitTo);
    assert_eq!(feed.entities[&8].trip_id, None);
    assert_eq!(feed.header_timestamp, MIDNIGHT + 28_800 + 401);
}

#[test]
fn undecodable_entries_are_counted_not_fatal() {
    let e = env();
    let mut sm = FeedStateMachine::new(e.schedule, e.vehicles);
    sm.apply(&entry(1, vec![]));
    sm.apply(&entry(2, vec![1, 2, 3]));
    sm.apply(&entry(3, encode_packet(&report(0)).unwrap().to_vec()));
    assert_eq!(sm.decode_failures(), 1);
    assert_eq!(sm.applied_index(), 3);
    assert_eq!(sm.feed().len(), 1);
}

#[test]
fn identical_logs_give_identical_feeds() {
    let e = env();
    let log: Vec<LogEntry> = (0..30)
        .map(|k| {
            let r = PositionReport { vehicle_id: 7 + (k % 3) as u32, longitude: -118.25 + 0.0005 * k as f32, ..report(k * 20) };
            entry(k + 1, encode_packet(&r).unwrap().to_vec())
        })
        .collect();
    let mut a = FeedStateMachine::new(e.schedule.clone(), e.vehicles.clone());
    let mut b = FeedStateMachine::new(e.schedule, e.vehicles);
    for x in &log {
        a.apply(x);
    }
    for x in &log {
        b.apply(x);
    }
    assert_eq!(encode_feed(a.feed()), encode_feed(b.feed()));
}

#[test]
fn readme_script_runs_clean() {
    let trace = run("nodes 3\nseed 42\n0 crash 3\n500 propose 7 34.05 -118.25 90 0 1699948800\n\
                     1200 partition 1 2,3\n2500 heal\n3000 restart 3\n5000 digest\n6000 end\n");
    assert!(trace.is_committed(&trace.proposals[0]), "{trace}");
    assert!(trace.feeds_converged());
    assert_eq!(trace.live_nodes().count(), 3);
}
