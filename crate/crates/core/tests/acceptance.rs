//! Acceptance criteria 1-9, one PASS/FAIL line each.
//!
//! Run with `cargo test -p swarmcap --test acceptance -- --nocapture` to see
//! the report.

mod common;

use std::path::PathBuf;

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swarmcap::config::ExperimentConfig;
use swarmcap::harness::cmd_simulate;
use swarmcap::metrics::{native_traffic_share_where, native_upload_fraction_where, Recorder, Window};
use swarmcap::net::NodeSpec;
use swarmcap::planner::{plan_report, CheckKind, ExperimentPlan};
use swarmcap::protocol::{upload_slots, PieceStrategy, TorrentMeta};
use swarmcap::sim::{run, PeerGroup, SeedPeer, SimConfig};
use swarmcap::tracker::Tracker;
use swarmcap::units::{mbps, KIB, MB};
use swarmcap::{NodeId, PeerId};

const SEEDS: [u64; 3] = [1, 2, 3];

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&config_path(name)).expect("bundled config parses")
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Run-averaged native connection fraction and native byte share of all
/// leechers (the original seed excluded).
fn clustering(cfg: &ExperimentConfig) -> (f64, f64) {
    let mut rec = Recorder::default();
    run(cfg.to_sim_config().unwrap(), &mut rec).expect("run completes");
    let leecher = |s: &swarmcap::metrics::Snapshot| s.peer != PeerId(0);
    let conn = native_upload_fraction_where(&rec.snapshots, leecher, Window::all()).unwrap();
    let bytes = native_traffic_share_where(&rec.snapshots, leecher, Window::all()).unwrap();
    (conn, bytes)
}

/// Seed-averaged (conn, bytes) per peer count.
fn sweep(base: &ExperimentConfig, points: &[u32]) -> Vec<(u32, Vec<(f64, f64)>, f64, f64)> {
    points
        .iter()
        .map(|&m| {
            let runs: Vec<(f64, f64)> = SEEDS
                .iter()
                .map(|&s| clustering(&base.with_group_size(m).with_seed(s)))
                .collect();
            let n = runs.len() as f64;
            let conn = runs.iter().map(|r| r.0).sum::<f64>() / n;
            let bytes = runs.iter().map(|r| r.1).sum::<f64>() / n;
            (m, runs, conn, bytes)
        })
        .collect()
}

fn describe(rows: &[(u32, Vec<(f64, f64)>, f64, f64)]) -> String {
    rows.iter()
        .map(|(m, runs, c, b)| {
            let per: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.0)).collect();
            format!("m={m}: conn {c:.3} [{}] bytes {b:.3}", per.join(" "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn criterion_1() -> Verdict {
    let cases = [
        (-1.0, 7),
        (0.0, 7),
        (0.5, 2),
        (8.99, 2),
        (9.0, 3),
        (14.99, 3),
        (15.0, 4),
        (41.99, 4),
        (42.0, 5),
        (5000.0, 54),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(r, want)| upload_slots(*r) != *want)
        .map(|(r, want)| format!("{r} KB/s gave {} not {want}", upload_slots(*r)))
        .collect();
    verdict(bad.is_empty(), if bad.is_empty() { "all branches exact".into() } else { bad.join(", ") })
}

fn two_node_plan(m: u64) -> ExperimentPlan {
    let nodes = (0..2)
        .map(|i| NodeSpec::new(NodeId(i), mbps(500.0), mbps(125.0), mbps(125.0)))
        .collect();
    let mut p = ExperimentPlan::new(nodes, vec![m, m]);
    p.max_upload = Some(mbps(5.0));
    p.observed_rate = Some(mbps(4.25));
    p
}

fn criterion_2() -> Verdict {
    let want = [(40, [[83.9, 86.1], [86.1, 83.9]]), (60, [[126.4, 128.6], [128.6, 126.4]])];
    let mut worst: f64 = 0.0;
    for (m, w) in want {
        let t = plan_report(&two_node_plan(m)).unwrap().traffic;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max((t.get(i, j) / MB - w[i][j]).abs());
            }
        }
    }
    verdict(worst <= 0.1, format!("max deviation {worst:.4} MB/s"))
}

fn criterion_3() -> Verdict {
    let t40 = plan_report(&two_node_plan(40)).unwrap();
    let t60 = plan_report(&two_node_plan(60)).unwrap();
    let both = (0..2).all(|n| t60.violated(n, CheckKind::NicIn) && t60.violated(n, CheckKind::NicOut));
    // the bundled plan configs agree with the hand-built plans
    let cfg40 = plan_report(&load("plan_t40.toml").to_plan().unwrap()).unwrap().is_safe();
    let cfg60 = plan_report(&load("plan_t60.toml").to_plan().unwrap()).unwrap().is_safe();
    verdict(
        t40.is_safe() && !t60.is_safe() && both && cfg40 && !cfg60,
        format!("T40 safe={}, T60 safe={}, T60 NIC-in/out violated on both nodes={both}", t40.is_safe(), t60.is_safe()),
    )
}

fn criterion_4() -> Verdict {
    let m = 100u32;
    let mut tracker = Tracker::new();
    for i in 0..2 * m {
        tracker.register(PeerId(i), NodeId(i % 2)).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut native, mut total) = (0usize, 0usize);
    for k in 0..10_000u32 {
        let me = PeerId(k % (2 * m));
        for p in tracker.peer_list(me, 40, &mut rng).unwrap() {
            native += usize::from(p.0 % 2 == me.0 % 2);
            total += 1;
        }
    }
    let got = native as f64 / total as f64;
    let want = (m - 1) as f64 / (2 * m - 1) as f64;
    verdict((got - want).abs() <= 0.05, format!("native fraction {got:.4}, expected {want:.4}"))
}

fn criterion_5() -> Verdict {
    let base = load("two_node_upload.toml");
    let rows = sweep(&base, &[40, 60, 100, 140]);
    let at40 = rows[0].1.iter().all(|r| (0.35..=0.65).contains(&r.0));
    let above = rows[2..].iter().all(|r| r.2 > 0.55);
    let monotone = rows[1..].windows(2).all(|w| w[1].2 >= w[0].2 - 0.05);
    verdict(
        at40 && above && monotone,
        format!("{} (40 in band={at40}, >0.55 at 100+={above}, non-decreasing={monotone})", describe(&rows)),
    )
}

fn criterion_6() -> (Verdict, ExperimentConfig) {
    let base = load("two_node_download.toml");
    let rows = sweep(&base, &[60, 70, 80, 100]);
    let band = rows[..3].iter().any(|r| 1.0 - r.2 > 0.5 && r.3 > 0.5);
    let monotone = rows.windows(2).all(|w| w[1].3 >= w[0].3);
    let v = verdict(
        band && monotone,
        format!(
            "{} (foreign-majority with native bytes in 60-80={band}, byte share non-decreasing={monotone})",
            describe(&rows)
        ),
    );
    (v, base)
}

fn criterion_7(download: &ExperimentConfig) -> Verdict {
    let mut random = download.clone();
    for g in &mut random.peers {
        g.strategy = PieceStrategy::Random;
    }
    let rows = sweep(&random, &[100, 140]);
    let ok = rows.iter().all(|r| r.2 > 0.55);
    verdict(ok, describe(&rows))
}

fn criterion_8() -> Verdict {
    let mut runner = TestRunner::deterministic();
    let strategy = common::instance();
    let mut checked = 0;
    for _ in 0..2000 {
        let inst = strategy.new_tree(&mut runner).unwrap().current();
        if let Err(e) = common::allocation_matches(&inst) {
            return verdict(false, format!("allocation mismatch: {e}"));
        }
        checked += 1;
    }
    let mut ticks = 0;
    for (strategy, seed) in [(PieceStrategy::Rarest, 1), (PieceStrategy::Random, 2)] {
        let meta = TorrentMeta::layout_v4(8_000_000, 16 * KIB, 256 * KIB).unwrap();
        let nodes = (0..2)
            .map(|i| NodeSpec::new(NodeId(i), mbps(500.0), mbps(125.0), mbps(125.0)))
            .collect();
        let seed_peer = SeedPeer {
            node: NodeId(0),
            max_upload: mbps(5.0),
            slots: None,
        };
        let mut cfg = SimConfig::new(nodes, meta, seed_peer);
        cfg.rng_seed = seed;
        cfg.join_spread = 2.0;
        for n in 0..2 {
            let mut g = PeerGroup::new(format!("n{n}"), 5, NodeId(n));
            g.max_upload = Some(mbps(2.0));
            g.strategy = strategy;
            cfg.groups.push(g);
        }
        match common::check_every_tick(cfg) {
            Ok(t) => ticks += t,
            Err(e) => return verdict(false, e),
        }
    }
    verdict(true, format!("{checked} allocations exact, {ticks} swarm ticks conserved and recounted"))
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    for (name, m) in [("smoke.toml", 5), ("two_node_upload.toml", 8)] {
        let cfg = load(name).with_group_size(m);
        let a = dir.path().join(format!("{name}-a"));
        let b = dir.path().join(format!("{name}-b"));
        cmd_simulate(&cfg, &a).unwrap();
        cmd_simulate(&cfg, &b).unwrap();
        for f in ["snapshots.csv", "events.csv", "summary.csv"] {
            if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
                return verdict(false, format!("{name}: {f} differs between runs"));
            }
        }
    }
    verdict(true, "repeated runs byte-identical")
}

#[test]
fn acceptance() {
    let (c6, download) = criterion_6();
    let results = [
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, c6),
        (7, criterion_7(&download)),
        (8, criterion_8()),
        (9, criterion_9()),
    ];
    for (n, v) in &results {
        println!("criterion {n}: {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<u32> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
