//! Three replicated services on localhost.

mod common;

use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::time::Duration;

use common::*;
use rtfeed_core::encode_feed;
use rtfeed_raft::Role;
use rtfeed_service::{Peer, ServiceHandle};
use rtfeed_testkit::live::{write_live_fixture, LiveFixture, LIVE_TRIP, LIVE_VEHICLE};

const ELECTION: Duration = Duration::from_secs(5);

fn free_port() -> SocketAddr {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap()
}

fn start_node(fx: &LiveFixture, data: &Path, id: u64, raft: &[SocketAddr]) -> ServiceHandle {
    let mut cfg = config(&fx.dir, &fx.vehicle_map, fx.offset);
    cfg.node_id = id.to_string();
    cfg.replication_enabled = true;
    cfg.raft_bind = Some(raft[id as usize - 1]);
    cfg.data_dir = Some(data.to_path_buf());
    cfg.peers = (1..=raft.len() as u64).filter(|&p| p != id).map(|p| Peer { id: p, addr: raft[p as usize - 1] }).collect();
    start(cfg)
}

fn leader(nodes: &[Option<ServiceHandle>]) -> Option<usize> {
    let leaders: Vec<usize> = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_ref().and_then(|n| n.replica_status()).is_some_and(|s| s.role == Role::Leader))
        .map(|(i, _)| i)
        .collect();
    (leaders.len() == 1).then(|| leaders[0])
}

fn has_report(node: &ServiceHandle, timestamp: u64) -> bool {
    node.feed().entities.get(&LIVE_VEHICLE).is_some_and(|r| r.timestamp == timestamp)
}

#[test]
fn reports_replicate_through_leader_changes() {
    let dir = tempfile::tempdir().unwrap();
    let data = tempfile::tempdir().unwrap();
    let fx = write_live_fixture(dir.path(), rtfeed_service::unix_now()).unwrap();
    let raft: Vec<SocketAddr> = (0..3).map(|_| free_port()).collect();
    let mut nodes: Vec<Option<ServiceHandle>> = (1..=3).map(|id| Some(start_node(&fx, data.path(), id, &raft))).collect();

    assert!(wait_until(ELECTION, || leader(&nodes).is_some()), "no leader elected");
    let first = leader(&nodes).unwrap();
    let follower = (first + 1) % 3;

    // a follower forwards to the leader; every node applies the commit
    let (a, b) = (&fx.stops[0], &fx.stops[1]);
    let mut r = report(LIVE_VEHICLE, a.lat as f32, ((a.lon + b.lon) / 2.0) as f32, 18.5, fx.unix(a.departure + 45));
    send_report(nodes[follower].as_ref().unwrap().udp_addr(), &r);
    assert!(wait_until(ELECTION, || nodes.iter().flatten().all(|n| has_report(n, r.timestamp))));
    assert!(nodes[follower].as_ref().unwrap().counters().forwarded >= 1);
    for n in nodes.iter().flatten() {
        let vp = vehicle_entity(&fetch_feed(n.http_addr()), LIVE_VEHICLE).unwrap();
        assert_eq!(vp.trip.unwrap().trip_id.as_deref(), Some(LIVE_TRIP));
    }

    // the two survivors elect a new leader and keep committing
    nodes[first] = None;
    assert!(wait_until(ELECTION, || leader(&nodes).is_some_and(|l| l != first)), "no new leader");
    r.timestamp += 5;
    let survivor = nodes.iter().flatten().next().unwrap();
    send_report(survivor.udp_addr(), &r);
    assert!(wait_until(ELECTION, || nodes.iter().flatten().all(|n| has_report(n, r.timestamp))));

    // the old leader restarts from its log and catches up
    nodes[first] = Some(start_node(&fx, data.path(), first as u64 + 1, &raft));
    assert!(wait_until(ELECTION, || has_report(nodes[first].as_ref().unwrap(), r.timestamp)));
    let settled = wait_until(ELECTION, || {
        let feeds: Vec<Vec<u8>> = nodes.iter().flatten().map(|n| encode_feed(&n.feed())).collect();
        feeds.windows(2).all(|w| w[0] == w[1])
    });
    assert!(settled, "feeds differ after catch-up");
    for n in nodes.iter().flatten() {
        assert_conserved(n);
        assert_eq!(n.replica_status().unwrap().decode_failures, 0);
    }
}
