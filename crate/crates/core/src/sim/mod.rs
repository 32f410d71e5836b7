//! Fixed-tick simulation of one swarm on a cluster.

mod engine;

pub use engine::{run, Simulation};

use thiserror::Error;

use crate::net::{DelayParams, NetError, NodeSpec};
use crate::peer::{AgentParams, SeedingPolicy};
use crate::protocol::{PieceStrategy, TorrentMeta};
use crate::tracker::TrackerError;
use crate::{NodeId, PeerId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("run aborted at t={time:.1}s after {ticks} ticks: {finished}/{leechers} leechers finished")]
    Budget {
        time: f64,
        ticks: u64,
        finished: usize,
        leechers: usize,
    },
    #[error("no leecher finished its download")]
    NoCompletions,
}

/// A set of identically configured leechers on one node.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerGroup {
    pub name: String,
    pub count: u32,
    pub node: NodeId,
    /// Caps in bytes/s, `None` for unlimited.
    pub max_upload: Option<f64>,
    pub max_download: Option<f64>,
    pub slots: Option<u32>,
    pub strategy: PieceStrategy,
    pub seeding: SeedingPolicy,
}

impl PeerGroup {
    pub fn new(name: impl Into<String>, count: u32, node: NodeId) -> Self {
        PeerGroup {
            name: name.into(),
            count,
            node,
            max_upload: None,
            max_download: None,
            slots: None,
            strategy: PieceStrategy::Rarest,
            seeding: SeedingPolicy::Stay,
        }
    }
}

/// The single original seed. Its upload rate is always capped.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPeer {
    pub node: NodeId,
    pub max_upload: f64,
    pub slots: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: Vec<NodeSpec>,
    pub torrent: TorrentMeta,
    pub seed_peer: SeedPeer,
    pub groups: Vec<PeerGroup>,
    /// Seconds per tick.
    pub tick: f64,
    pub snapshot_interval: f64,
    /// Fixed run length; `None` runs until every leecher has finished.
    pub duration: Option<f64>,
    /// Simulated-time budget for open-ended runs.
    pub max_time: f64,
    pub rng_seed: u64,
    /// Leechers join at uniform random times in `[0, join_spread]`.
    pub join_spread: f64,
    pub agent: AgentParams,
    pub delay: DelayParams,
    /// Framing bytes added to every control message (Ethernet + IP + TCP
    /// headers by default).
    pub message_overhead: u64,
}

impl SimConfig {
    pub fn new(nodes: Vec<NodeSpec>, torrent: TorrentMeta, seed_peer: SeedPeer) -> Self {
        SimConfig {
            nodes,
            torrent,
            seed_peer,
            groups: Vec::new(),
            tick: 0.1,
            snapshot_interval: 1.0,
            duration: None,
            max_time: 36_000.0,
            rng_seed: 1,
            join_spread: 0.0,
            agent: AgentParams::default(),
            delay: DelayParams::default(),
            message_overhead: 54,
        }
    }

    pub fn leecher_count(&self) -> usize {
        self.groups.iter().map(|g| g.count as usize).sum()
    }

    /// Ticks per snapshot.
    pub fn snapshot_ticks(&self) -> u64 {
        (self.snapshot_interval / self.tick).round().max(1.0) as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return bad(format!("tick must be positive, got {}", self.tick));
        }
        if !(self.snapshot_interval >= self.tick) {
            return bad("snapshot interval shorter than a tick".into());
        }
        let ratio = self.snapshot_interval / self.tick;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad("snapshot interval must be a whole number of ticks".into());
        }
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return bad(format!("duration must be positive, got {d}"));
            }
        }
        if !(self.max_time > 0.0) {
            return bad("max_time must be positive".into());
        }
        if !(self.join_spread >= 0.0 && self.join_spread.is_finite()) {
            return bad("join spread must be non-negative".into());
        }
        if self.nodes.is_empty() {
            return bad("cluster has no nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.index() != i {
                return bad(format!("node {} listed at position {i}", n.id));
            }
            if !(n.loopback > 0.0 && n.nic_up > 0.0 && n.nic_down > 0.0) {
                return bad(format!("node {} has a non-positive capacity", n.id));
            }
        }
        let node_ok = |n: NodeId| n.index() < self.nodes.len();
        if !node_ok(self.seed_peer.node) {
            return bad(format!("seed placed on unknown node {}", self.seed_peer.node));
        }
        if !(self.seed_peer.max_upload > 0.0 && self.seed_peer.max_upload.is_finite()) {
            return bad("the seed needs a positive upload cap".into());
        }
        if self.seed_peer.slots == Some(0) {
            return bad("seed slots must be at least 1".into());
        }
        for g in &self.groups {
            if !node_ok(g.node) {
                return bad(format!("group {:?} placed on unknown node {}", g.name, g.node));
            }
            for cap in [g.max_upload, g.max_download].into_iter().flatten() {
                if !(cap > 0.0) {
                    return bad(format!("group {:?} has a non-positive cap", g.name));
                }
            }
            if g.slots == Some(0) {
                return bad(format!("group {:?} has zero upload slots", g.name));
            }
            if let SeedingPolicy::LeaveAfter(t) = g.seeding {
                if !(t >= 0.0) {
                    return bad(format!("group {:?} has a negative seeding time", g.name));
                }
            }
        }
        if self.agent.pipeline_depth == 0 || self.agent.max_buddies == 0 || self.agent.list_size == 0 {
            return bad("agent parameters must be positive".into());
        }
        if !(self.agent.rechoke_period > 0.0) {
            return bad("rechoke period must be positive".into());
        }
        if !(self.delay.control_floor > 0.0 && self.delay.control_floor <= 1.0) || !(self.delay.base_latency >= 0.0)
        {
            return bad("control delay parameters out of range".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerSummary {
    pub id: PeerId,
    pub node: NodeId,
    /// Index into the config groups, `None` for the original seed.
    pub group: Option<usize>,
    pub join_time: f64,
    pub finish_time: Option<f64>,
    pub left_time: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl PeerSummary {
    pub fn download_time(&self) -> Option<f64> {
        self.finish_time.map(|f| f - self.join_time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub file_size: u64,
    pub end_time: f64,
    pub ticks: u64,
    pub group_names: Vec<String>,
    pub peers: Vec<PeerSummary>,
}

impl SimSummary {
    /// Leechers of `group`, or all of them.
    pub fn leechers(&self, group: Option<usize>) -> impl Iterator<Item = &PeerSummary> {
        self.peers
            .iter()
            .filter(move |p| p.group.is_some() && (group.is_none() || p.group == group))
    }

    pub fn completed(&self) -> usize {
        self.leechers(None).filter(|p| p.finish_time.is_some()).count()
    }

    pub fn all_complete(&self) -> bool {
        self.leechers(None).all(|p| p.finish_time.is_some())
    }

    pub fn total_bytes_down(&self) -> u64 {
        self.peers.iter().map(|p| p.bytes_down).sum()
    }

    pub fn total_bytes_up(&self) -> u64 {
        self.peers.iter().map(|p| p.bytes_up).sum()
    }

    /// Mean of file_size / download time over the leechers that finished.
    pub fn average_download_rate(&self, group: Option<usize>) -> Result<f64, SimError> {
        let rates: Vec<f64> = self
            .leechers(group)
            .filter_map(|p| p.download_time())
            .map(|t| self.file_size as f64 / t)
            .collect();
        if rates.is_empty() {
            return Err(SimError::NoCompletions);
        }
        Ok(rates.iter().sum::<f64>() / rates.len() as f64)
    }

    /// Average download rate times the number of peers in the group.
    pub fn aggregated_bandwidth(&self, group: Option<usize>) -> Result<f64, SimError> {
        let n = self.leechers(group).count();
        Ok(self.average_download_rate(group)? * n as f64)
    }
}

pub fn average_download_rate(summary: &SimSummary) -> Result<f64, SimError> {
    summary.average_download_rate(None)
}

pub fn aggregated_bandwidth(summary: &SimSummary, group: Option<usize>) -> Result<f64, SimError> {
    summary.aggregated_bandwidth(group)
}
