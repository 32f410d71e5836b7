use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PeerSummary, SimConfig, SimError, SimSummary};
use crate::metrics::{EventKind, EventRecord, MetricsSink, Snapshot, UnchokedConn};
use crate::net::{allocate_rates, ControlPlane, Flow, ResourceGraph};
use crate::peer::{AgentEvent, Message, Outbox, PeerAgent, PeerConfig, SeedingPolicy};
use crate::tracker::Tracker;
use crate::{NodeId, PeerId};

const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug)]
struct Envelope {
    from: PeerId,
    to: PeerId,
    msg: Message,
}

#[derive(Debug, Clone, Copy, Default)]
struct Interval {
    up: f64,
    down: f64,
    down_native: f64,
    down_foreign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Presence {
    Waiting,
    Active,
    Left,
}

/// A running simulation. [`run`] drives it to completion; tests can also
/// step it tick by tick and inspect the agents in between.
pub struct Simulation {
    cfg: SimConfig,
    agents: Vec<PeerAgent>,
    group_of: Vec<Option<usize>>,
    presence: Vec<Presence>,
    left_at: Vec<Option<f64>>,
    tracker: Tracker,
    graph: ResourceGraph,
    control: ControlPlane,
    queue: BTreeMap<u64, Vec<Envelope>>,
    /// Last delivery tick per (sender, receiver), keeps each pair FIFO.
    last_delivery: Vec<u64>,
    interval: Vec<Interval>,
    rng: ChaCha8Rng,
    tick: u64,
    leechers_done: usize,
    leechers: usize,
    out: Outbox,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let n = 1 + cfg.leecher_count();
        let mut graph = ResourceGraph::new(cfg.nodes.clone());
        let mut agents = Vec::with_capacity(n);
        let mut group_of = Vec::with_capacity(n);

        let seed_id = graph.add_peer(cfg.seed_peer.node, Some(cfg.seed_peer.max_upload), None);
        let mut seed_cfg = PeerConfig::new(seed_id, cfg.seed_peer.node);
        seed_cfg.max_upload = Some(cfg.seed_peer.max_upload);
        seed_cfg.slots = cfg.seed_peer.slots;
        agents.push(PeerAgent::new(seed_cfg, cfg.agent, cfg.torrent, n, peer_seed(cfg.rng_seed, seed_id), true));
        group_of.push(None);

        for (gi, g) in cfg.groups.iter().enumerate() {
            for _ in 0..g.count {
                let id = graph.add_peer(g.node, g.max_upload, g.max_download);
                let mut pc = PeerConfig::new(id, g.node);
                pc.max_upload = g.max_upload;
                pc.max_download = g.max_download;
                pc.slots = g.slots;
                pc.strategy = g.strategy;
                pc.seeding = g.seeding;
                if cfg.join_spread > 0.0 {
                    // whole ticks, so joins line up with the loop
                    let t: f64 = rng.gen_range(0.0..=cfg.join_spread);
                    pc.join_time = (t / cfg.tick).floor() * cfg.tick;
                }
                agents.push(PeerAgent::new(pc, cfg.agent, cfg.torrent, n, peer_seed(cfg.rng_seed, id), false));
                group_of.push(Some(gi));
            }
        }

        Ok(Simulation {
            control: ControlPlane::new(&cfg.nodes, cfg.delay),
            presence: vec![Presence::Waiting; n],
            left_at: vec![None; n],
            tracker: Tracker::new(),
            queue: BTreeMap::new(),
            last_delivery: vec![0; n * n],
            interval: vec![Interval::default(); n],
            tick: 0,
            leechers_done: 0,
            leechers: n - 1,
            out: Outbox::default(),
            agents,
            group_of,
            graph,
            rng,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn agents(&self) -> &[PeerAgent] {
        &self.agents
    }

    /// Simulated time at the start of the next tick.
    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.tick
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn is_active(&self, p: PeerId) -> bool {
        self.presence[p.index()] == Presence::Active
    }

    /// Control messages queued and not yet delivered.
    pub fn in_flight_messages(&self) -> usize {
        self.queue.values().map(Vec::len).sum()
    }

    /// True once every leecher finished or left, or the fixed duration ran out.
    pub fn is_done(&self) -> bool {
        match self.cfg.duration {
            Some(d) => self.time() + 1e-9 >= d,
            None => self.leechers_done == self.leechers,
        }
    }

    /// Advances one tick. Returns whether the run is complete.
    pub fn step(&mut self, sink: &mut dyn MetricsSink) -> Result<bool, SimError> {
        if self.is_done() {
            return Ok(true);
        }
        if self.cfg.duration.is_none() && self.time() >= self.cfg.max_time {
            return Err(SimError::Budget {
                time: self.time(),
                ticks: self.tick,
                finished: self.leechers_done,
                leechers: self.leechers,
            });
        }
        let k = self.tick;
        let dt = self.cfg.tick;
        let now = k as f64 * dt;
        let end = (k + 1) as f64 * dt;

        self.join_due(now, sink)?;

        // 1. control messages due now
        if let Some(batch) = self.queue.remove(&k) {
            for env in batch {
                let to = env.to.index();
                if self.presence[to] != Presence::Active {
                    continue;
                }
                let mut out = std::mem::take(&mut self.out);
                self.agents[to].receive(env.from, env.msg, now, &mut out);
                self.dispatch(env.to, &mut out, now, sink);
                self.out = out;
            }
        }

        // 2. agent timers, departures, tracker refills
        for p in 0..self.agents.len() {
            if self.presence[p] != Presence::Active {
                continue;
            }
            let mut out = std::mem::take(&mut self.out);
            self.agents[p].tick(now, &mut out);
            self.dispatch(PeerId(p as u32), &mut out, now, sink);
            self.out = out;
        }
        self.depart_due(now, sink)?;
        self.refill(now)?;

        // 3-4. flows and rates
        self.graph.flows.clear();
        for (p, a) in self.agents.iter().enumerate() {
            if self.presence[p] != Presence::Active {
                continue;
            }
            for (to, to_node, pending) in a.upload_queues() {
                if pending > 0.0 {
                    self.graph.flows.push(Flow::new(a.id(), a.node(), to, to_node, Some(pending / dt)));
                }
            }
        }
        let alloc = allocate_rates(&self.graph)?;

        // 5. move bytes, complete slices
        let flows = std::mem::take(&mut self.graph.flows);
        for (fi, f) in flows.iter().enumerate() {
            let bytes = alloc.rate(fi) * dt;
            if bytes <= 0.0 {
                continue;
            }
            let (src, dst) = (f.src_peer.index(), f.dst_peer.index());
            let done = self.agents[src].send_bytes(f.dst_peer, bytes, now);
            self.agents[dst].record_download(f.src_peer, bytes, now);
            self.interval[src].up += bytes;
            let iv = &mut self.interval[dst];
            iv.down += bytes;
            if f.is_native() {
                iv.down_native += bytes;
            } else {
                iv.down_foreign += bytes;
            }
            for (piece, slice) in done {
                let mut out = std::mem::take(&mut self.out);
                if self.agents[dst].receive_slice(f.src_peer, piece, slice, end, &mut out) {
                    let len = self.cfg.torrent.slice_len(piece, slice);
                    self.agents[src].credit_upload(len);
                }
                self.dispatch(f.dst_peer, &mut out, end, sink);
                self.out = out;
            }
        }
        self.graph.flows = flows;

        // 6. the control plane sees this tick's data rates
        self.control.update(&alloc.node_usage, dt);

        self.tick += 1;
        if self.tick % self.cfg.snapshot_ticks() == 0 {
            self.snapshot(end, sink);
        }
        Ok(self.is_done())
    }

    fn join_due(&mut self, now: f64, sink: &mut dyn MetricsSink) -> Result<(), SimError> {
        for p in 0..self.agents.len() {
            if self.presence[p] == Presence::Waiting && self.agents[p].config().join_time <= now + 1e-9 {
                self.presence[p] = Presence::Active;
                let id = PeerId(p as u32);
                self.tracker.register(id, self.agents[p].node())?;
                for kind in [EventKind::Started, EventKind::Joined] {
                    sink.event(EventRecord { time: now, peer: id, kind });
                }
            }
        }
        Ok(())
    }

    fn depart_due(&mut self, now: f64, sink: &mut dyn MetricsSink) -> Result<(), SimError> {
        for p in 0..self.agents.len() {
            if self.presence[p] != Presence::Active {
                continue;
            }
            let SeedingPolicy::LeaveAfter(after) = self.agents[p].config().seeding else {
                continue;
            };
            let Some(done) = self.agents[p].finished_at() else {
                continue;
            };
            if self.group_of[p].is_none() || now + 1e-9 < done + after {
                continue;
            }
            let id = PeerId(p as u32);
            let buddies: Vec<PeerId> = self.agents[p].buddies().iter().map(|b| b.id).collect();
            for b in buddies {
                self.agents[b.index()].remove_buddy(id);
                self.agents[p].remove_buddy(b);
            }
            self.presence[p] = Presence::Left;
            self.left_at[p] = Some(now);
            self.tracker.deregister(id)?;
            sink.event(EventRecord {
                time: now,
                peer: id,
                kind: EventKind::Left,
            });
        }
        Ok(())
    }

    /// Peers short of buddies ask the tracker for more and dial them, in a
    /// shuffled order so no peer id is favoured.
    fn refill(&mut self, now: f64) -> Result<(), SimError> {
        let mut askers: Vec<usize> = (0..self.agents.len())
            .filter(|&p| self.presence[p] == Presence::Active && self.agents[p].wants_announce(now))
            .collect();
        if askers.is_empty() {
            return Ok(());
        }
        askers.shuffle(&mut self.rng);
        let list_size = self.cfg.agent.list_size;
        for p in askers {
            let id = PeerId(p as u32);
            self.agents[p].note_announce(now);
            let ids = self.tracker.peer_list(id, list_size, &mut self.rng)?;
            for q in self.agents[p].connect_targets(&ids) {
                self.connect(id, q, now);
            }
        }
        Ok(())
    }

    fn connect(&mut self, a: PeerId, b: PeerId, now: f64) {
        let (ai, bi) = (a.index(), b.index());
        if self.presence[bi] != Presence::Active
            || !self.agents[ai].wants_outbound()
            || !self.agents[bi].accepts_incoming()
            || self.agents[ai].is_buddy(b)
        {
            return;
        }
        let (an, bn) = (self.agents[ai].node(), self.agents[bi].node());
        let mut out = std::mem::take(&mut self.out);
        self.agents[ai].add_buddy(b, bn, now, &mut out);
        self.route(a, &mut out, now);
        self.agents[bi].add_buddy(a, an, now, &mut out);
        self.route(b, &mut out, now);
        self.out = out;
    }

    /// Sends queued messages and reports lifecycle events of `from`.
    fn dispatch(&mut self, from: PeerId, out: &mut Outbox, time: f64, sink: &mut dyn MetricsSink) {
        for ev in out.events.drain(..) {
            let kind = match ev {
                AgentEvent::PieceComplete(p) => EventKind::PieceComplete(p),
                AgentEvent::DownloadFinished => {
                    if self.group_of[from.index()].is_some() {
                        self.leechers_done += 1;
                    }
                    EventKind::DownloadFinished
                }
            };
            sink.event(EventRecord { time, peer: from, kind });
        }
        self.route(from, out, time);
    }

    fn route(&mut self, from: PeerId, out: &mut Outbox, _time: f64) {
        let n = self.agents.len();
        let src_node = self.agents[from.index()].node();
        let dt = self.cfg.tick;
        for (to, msg) in out.messages.drain(..) {
            if self.presence[to.index()] != Presence::Active {
                continue;
            }
            let dst_node: NodeId = self.agents[to.index()].node();
            let size = (msg.wire_size() + self.cfg.message_overhead) as f64;
            let delay = self.control.send(src_node, dst_node, size);
            let mut at = self.tick + 1 + (delay / dt).floor() as u64;
            let last = &mut self.last_delivery[from.index() * n + to.index()];
            at = at.max(*last);
            *last = at;
            self.queue.entry(at).or_default().push(Envelope { from, to, msg });
        }
    }

    fn snapshot(&mut self, time: f64, sink: &mut dyn MetricsSink) {
        let span = self.cfg.snapshot_ticks() as f64 * self.cfg.tick;
        for (p, a) in self.agents.iter().enumerate() {
            if self.presence[p] != Presence::Active {
                continue;
            }
            let iv = std::mem::take(&mut self.interval[p]);
            let unchoked = a
                .buddies()
                .iter()
                .filter(|b| b.is_upload_connection())
                .map(|b| UnchokedConn {
                    buddy: b.id,
                    buddy_node: b.node,
                    native: b.node == a.node(),
                })
                .collect();
            let down = a.bytes_down();
            sink.snapshot(Snapshot {
                time,
                peer: a.id(),
                node: a.node(),
                role: a.role(),
                ul_rate: iv.up / span,
                dl_rate: iv.down / span,
                share_ratio: (down > 0).then(|| a.bytes_up() as f64 / down as f64),
                bytes_up: a.bytes_up(),
                bytes_down: down,
                buddies: a.buddy_count() as u32,
                unchoked,
                dl_native_bytes: iv.down_native,
                dl_foreign_bytes: iv.down_foreign,
            });
        }
    }

    pub fn summary(&self) -> SimSummary {
        let peers = self
            .agents
            .iter()
            .enumerate()
            .map(|(p, a)| PeerSummary {
                id: a.id(),
                node: a.node(),
                group: self.group_of[p],
                join_time: a.config().join_time,
                finish_time: if self.group_of[p].is_some() { a.finished_at() } else { None },
                left_time: self.left_at[p],
                bytes_up: a.bytes_up(),
                bytes_down: a.bytes_down(),
            })
            .collect();
        SimSummary {
            file_size: self.cfg.torrent.file_size(),
            end_time: self.time(),
            ticks: self.tick,
            group_names: self.cfg.groups.iter().map(|g| g.name.clone()).collect(),
            peers,
        }
    }
}

fn peer_seed(master: u64, id: PeerId) -> u64 {
    master ^ (id.0 as u64 + 1).wrapping_mul(SEED_STRIDE)
}

/// Runs a simulation to completion, streaming metrics into `sink`.
pub fn run(cfg: SimConfig, sink: &mut dyn MetricsSink) -> Result<SimSummary, SimError> {
    let mut sim = Simulation::new(cfg)?;
    while !sim.step(sink)? {}
    Ok(sim.summary())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Recorder;
    use crate::net::NodeSpec;
    use crate::protocol::TorrentMeta;
    use crate::sim::{PeerGroup, SeedPeer};
    use crate::units::{mbps, KIB, MIB};

    fn config(leechers: u32, file: u64) -> SimConfig {
        let meta = TorrentMeta::layout_v4(file, 64 * KIB, 256 * KIB).unwrap();
        let nodes = vec![NodeSpec::new(NodeId(0), mbps(500.0), mbps(125.0), mbps(125.0))];
        let seed = SeedPeer {
            node: NodeId(0),
            max_upload: mbps(5.0),
            slots: None,
        };
        let mut c = SimConfig::new(nodes, meta, seed);
        let mut g = PeerGroup::new("leechers", leechers, NodeId(0));
        g.max_download = Some(mbps(5.0));
        c.groups.push(g);
        c
    }

    #[test]
    fn zero_leechers_transfers_nothing() {
        let mut rec = Recorder::default();
        let s = run(config(0, 4 * MIB), &mut rec).unwrap();
        assert_eq!(s.total_bytes_down(), 0);
        assert_eq!(s.ticks, 0);
        assert!(rec.snapshots.is_empty());
    }

    #[test]
    fn single_leecher_completes() {
        let mut rec = Recorder::default();
        let s = run(config(1, 4 * MIB), &mut rec).unwrap();
        assert!(s.all_complete());
        assert_eq!(s.peers[1].bytes_down, 4 * MIB);
        assert_eq!(s.peers[0].bytes_up, 4 * MIB);
        // 4 MiB at 5 MB/s is about 0.84 s plus handshakes
        let t = s.peers[1].download_time().unwrap();
        assert!(t > 0.8 && t < 3.0, "download took {t}");
        let finished = rec.events.iter().filter(|e| e.kind == EventKind::DownloadFinished).count();
        assert_eq!(finished, 1);
    }

    #[test]
    fn snapshots_every_second_for_every_peer() {
        let mut c = config(3, 8 * MIB);
        c.duration = Some(5.0);
        let mut rec = Recorder::default();
        run(c, &mut rec).unwrap();
        assert_eq!(rec.snapshots.len(), 5 * 4);
        let times: Vec<f64> = rec.snapshots.iter().map(|s| s.time).step_by(4).collect();
        assert_eq!(times, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn leave_after_seeding() {
        let mut c = config(4, 4 * MIB);
        c.groups[0].seeding = SeedingPolicy::LeaveAfter(2.0);
        let mut sim = Simulation::new(c).unwrap();
        let mut rec = Recorder::default();
        while !sim.step(&mut rec).unwrap() {}
        // keep going so departures happen
        let mut c2 = sim.config().clone();
        c2.duration = Some(sim.time() + 5.0);
        let mut rec2 = Recorder::default();
        let s = run(c2, &mut rec2).unwrap();
        assert!(s.peers[1..].iter().all(|p| p.left_time.is_some()));
        let left = rec2.events.iter().filter(|e| e.kind == EventKind::Left).count();
        assert_eq!(left, 4);
    }

    #[test]
    fn budget_aborts() {
        let mut c = config(2, 64 * MIB);
        c.max_time = 1.0;
        let err = run(c, &mut Recorder::default()).unwrap_err();
        assert!(matches!(err, SimError::Budget { .. }), "{err}");
    }

    #[test]
    fn messages_never_arrive_before_next_tick() {
        let mut sim = Simulation::new(config(3, 2 * MIB)).unwrap();
        let mut rec = Recorder::default();
        for _ in 0..5 {
            sim.step(&mut rec).unwrap();
            assert!(sim.queue.keys().all(|&k| k >= sim.ticks()));
        }
    }
}
