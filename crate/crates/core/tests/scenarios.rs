//! Small end-to-end runs with rates known in closed form.

use std::collections::HashMap;

use swarmcap::metrics::{native_traffic_share, native_upload_fraction, EventKind, Recorder, Window};
use swarmcap::net::NodeSpec;
use swarmcap::protocol::TorrentMeta;
use swarmcap::sim::{run, PeerGroup, SeedPeer, SimConfig};
use swarmcap::units::{mbps, KIB, MIB};
use swarmcap::{NodeId, PeerId};

fn single_node(file: u64) -> SimConfig {
    let meta = TorrentMeta::layout_v4(file, 64 * KIB, 256 * KIB).unwrap();
    let nodes = vec![NodeSpec::new(NodeId(0), mbps(500.0), mbps(125.0), mbps(125.0))];
    let seed = SeedPeer {
        node: NodeId(0),
        max_upload: mbps(5.0),
        slots: Some(7),
    };
    SimConfig::new(nodes, meta, seed)
}

#[test]
fn lone_leecher_downloads_at_seed_rate() {
    // 256 MB at the seed's 5 MB/s takes 51.2 s
    let mut cfg = single_node(256_000_000);
    cfg.groups.push(PeerGroup::new("l", 1, NodeId(0)));
    let mut rec = Recorder::default();
    let s = run(cfg, &mut rec).unwrap();
    let t = s.leechers(None).next().unwrap().download_time().unwrap();
    assert!((t - 51.2).abs() <= 30.0, "download took {t} s");
    // nothing beats the seed's cap
    assert!(t >= 51.2 - 0.1, "download took {t} s");
}

#[test]
fn download_capped_leechers_average_between_four_and_five() {
    let mut cfg = single_node(256 * MIB);
    let mut g = PeerGroup::new("l", 10, NodeId(0));
    g.max_download = Some(mbps(5.0));
    cfg.groups.push(g);
    let mut rec = Recorder::default();
    let s = run(cfg, &mut rec).unwrap();
    assert!(s.all_complete());
    let avg = s.average_download_rate(None).unwrap() / 1e6;
    assert!((4.0..=5.0).contains(&avg), "average {avg} MB/s");
    let agg = s.aggregated_bandwidth(None).unwrap() / MIB as f64;
    assert!((40.0..=50.0).contains(&agg), "aggregate {agg} MiB/s");
}

#[test]
fn summary_rate_matches_events() {
    let mut cfg = single_node(32_000_000);
    cfg.join_spread = 5.0;
    let mut g = PeerGroup::new("l", 6, NodeId(0));
    g.max_upload = Some(mbps(3.0));
    cfg.groups.push(g);
    let mut rec = Recorder::default();
    let s = run(cfg, &mut rec).unwrap();
    let mut joined: HashMap<PeerId, f64> = HashMap::new();
    let mut rates = Vec::new();
    for e in &rec.events {
        match e.kind {
            EventKind::Joined => {
                joined.insert(e.peer, e.time);
            }
            EventKind::DownloadFinished => rates.push(32e6 / (e.time - joined[&e.peer])),
            _ => {}
        }
    }
    assert_eq!(rates.len(), 6);
    let from_events = rates.iter().sum::<f64>() / rates.len() as f64;
    let summary = s.average_download_rate(None).unwrap();
    assert!((from_events - summary).abs() <= 1e-9 * summary);
    // single node: every connection and every byte is native
    assert_eq!(native_upload_fraction(&rec.snapshots, NodeId(0), Window::all()).unwrap(), 1.0);
    assert_eq!(native_traffic_share(&rec.snapshots, NodeId(0), Window::all()).unwrap(), 1.0);
}

#[test]
fn events_are_ordered_per_peer() {
    let mut cfg = single_node(16_000_000);
    cfg.join_spread = 2.0;
    cfg.groups.push(PeerGroup::new("l", 4, NodeId(0)));
    let mut rec = Recorder::default();
    run(cfg, &mut rec).unwrap();
    let mut last: HashMap<PeerId, f64> = HashMap::new();
    let mut finished: HashMap<PeerId, usize> = HashMap::new();
    for e in &rec.events {
        let prev = last.insert(e.peer, e.time).unwrap_or(f64::NEG_INFINITY);
        assert!(e.time >= prev);
        if e.kind == EventKind::DownloadFinished {
            *finished.entry(e.peer).or_default() += 1;
        }
    }
    assert_eq!(finished.len(), 4);
    assert!(finished.values().all(|&n| n == 1));
}
