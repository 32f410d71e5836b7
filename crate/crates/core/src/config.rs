//! Experiment description files.
//!
//! Configs are TOML with the unit spelled out in every quantity key
//! (`_MBps`, `_MB`, `_KiB`, `_s`, `_B`). MB is decimal (10^6 bytes); KiB is
//! only used for the power-of-two slice and piece sizes.
//!
//! ```toml
//! [cluster]
//! nodes = [
//!   { loopback_MBps = 500.0, nic_ul_MBps = 125.0, nic_dl_MBps = 125.0 },
//!   { loopback_MBps = 500.0, nic_ul_MBps = 125.0, nic_dl_MBps = 125.0 },
//! ]
//!
//! [torrent]
//! file_size_MB = 256.0
//! piece_rule = "v4"
//! piece_size_KiB = 256
//!
//! [[peers]]
//! count = 40
//! node = 0
//! ul_cap_MBps = 5.0
//!
//! [seedpeer]
//! node = 0
//! ul_cap_MBps = 5.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{DelayParams, NodeSpec};
use crate::peer::{AgentParams, SeedingPolicy};
use crate::planner::ExperimentPlan;
use crate::protocol::{PieceRule, PieceStrategy, ProtocolError, TorrentMeta};
use crate::sim::{PeerGroup, SeedPeer, SimConfig, SimError};
use crate::units::{mbps, KIB, MB};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("config error: {0}")]
    Invalid(String),
    #[error(transparent)]
    Torrent(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("serializing config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub cluster: ClusterSection,
    pub torrent: TorrentSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub peers: Vec<PeerSection>,
    pub seedpeer: SeedSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub nodes: Vec<NodeSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    #[serde(rename = "loopback_MBps")]
    pub loopback_mbps: f64,
    #[serde(rename = "nic_ul_MBps")]
    pub nic_ul_mbps: f64,
    #[serde(rename = "nic_dl_MBps")]
    pub nic_dl_mbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorrentSection {
    #[serde(rename = "file_size_MB")]
    pub file_size_mb: f64,
    #[serde(rename = "slice_size_KiB", default = "default_slice_kib")]
    pub slice_size_kib: u64,
    pub piece_rule: PieceRule,
    /// Required for v4, ignored by v5.
    #[serde(rename = "piece_size_KiB", default, skip_serializing_if = "Option::is_none")]
    pub piece_size_kib: Option<u64>,
}

fn default_slice_kib() -> u64 {
    64
}

/// `slots = "auto"` or a fixed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slots {
    Auto(AutoWord),
    Fixed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoWord {
    #[serde(rename = "auto")]
    Auto,
}

impl Default for Slots {
    fn default() -> Self {
        Slots::AUTO
    }
}

impl Slots {
    pub const AUTO: Slots = Slots::Auto(AutoWord::Auto);

    fn get(self) -> Option<u32> {
        match self {
            Slots::Auto(_) => None,
            Slots::Fixed(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub count: u32,
    pub node: u32,
    #[serde(rename = "ul_cap_MBps", default, skip_serializing_if = "Option::is_none")]
    pub ul_cap_mbps: Option<f64>,
    #[serde(rename = "dl_cap_MBps", default, skip_serializing_if = "Option::is_none")]
    pub dl_cap_mbps: Option<f64>,
    #[serde(default)]
    pub slots: Slots,
    #[serde(default = "default_strategy")]
    pub strategy: PieceStrategy,
    /// Leave this many seconds after finishing; stay forever when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leave_after_s: Option<f64>,
}

fn default_strategy() -> PieceStrategy {
    PieceStrategy::Rarest
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub node: u32,
    #[serde(rename = "ul_cap_MBps")]
    pub ul_cap_mbps: f64,
    #[serde(default)]
    pub slots: Slots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub tick_s: f64,
    pub rechoke_s: f64,
    pub snapshot_s: f64,
    pub rng_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    pub max_time_s: f64,
    pub join_spread_s: f64,
    pub optimistic_unchoke: bool,
    pub pipeline_depth: usize,
    pub control_floor: f64,
    pub base_latency_s: f64,
    #[serde(rename = "message_overhead_B")]
    pub message_overhead_b: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let agent = AgentParams::default();
        let delay = DelayParams::default();
        SimSection {
            tick_s: 0.1,
            rechoke_s: agent.rechoke_period,
            snapshot_s: 1.0,
            rng_seed: 1,
            duration_s: None,
            max_time_s: 36_000.0,
            join_spread_s: 0.0,
            optimistic_unchoke: agent.optimistic_unchoke,
            pipeline_depth: agent.pipeline_depth,
            control_floor: delay.control_floor,
            base_latency_s: delay.base_latency,
            message_overhead_b: 54,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    /// Per-peer rate assumed for the direction without a cap.
    #[serde(rename = "observed_dl_MBps", default, skip_serializing_if = "Option::is_none")]
    pub observed_dl_mbps: Option<f64>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

impl ExperimentConfig {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.peers.iter().any(|p| p.leave_after_s.is_some_and(|t| !(t >= 0.0))) {
            return Err(ConfigError::Invalid("leave_after_s must be non-negative".into()));
        }
        self.to_sim_config()?.validate()?;
        Ok(())
    }

    pub fn torrent_meta(&self) -> Result<TorrentMeta, ConfigError> {
        let t = &self.torrent;
        if !(t.file_size_mb > 0.0 && t.file_size_mb.is_finite()) {
            return Err(ConfigError::Invalid("file_size_MB must be positive".into()));
        }
        let file = (t.file_size_mb * MB).round() as u64;
        let slice = t.slice_size_kib * KIB;
        Ok(match t.piece_rule {
            PieceRule::V5 => TorrentMeta::layout_v5(file, slice)?,
            PieceRule::V4 => {
                let piece = t
                    .piece_size_kib
                    .ok_or_else(|| ConfigError::Invalid("piece_rule v4 needs piece_size_KiB".into()))?;
                TorrentMeta::layout_v4(file, slice, piece * KIB)?
            }
        })
    }

    pub fn node_specs(&self) -> Vec<NodeSpec> {
        self.cluster
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeSpec::new(NodeId(i as u32), mbps(n.loopback_mbps), mbps(n.nic_ul_mbps), mbps(n.nic_dl_mbps)))
            .collect()
    }

    pub fn to_sim_config(&self) -> Result<SimConfig, ConfigError> {
        let s = &self.sim;
        let seed = SeedPeer {
            node: NodeId(self.seedpeer.node),
            max_upload: mbps(self.seedpeer.ul_cap_mbps),
            slots: self.seedpeer.slots.get(),
        };
        let mut cfg = SimConfig::new(self.node_specs(), self.torrent_meta()?, seed);
        for (i, p) in self.peers.iter().enumerate() {
            let name = p.name.clone().unwrap_or_else(|| format!("group{i}"));
            let mut g = PeerGroup::new(name, p.count, NodeId(p.node));
            g.max_upload = p.ul_cap_mbps.map(mbps);
            g.max_download = p.dl_cap_mbps.map(mbps);
            g.slots = p.slots.get();
            g.strategy = p.strategy;
            g.seeding = p.leave_after_s.map_or(SeedingPolicy::Stay, SeedingPolicy::LeaveAfter);
            cfg.groups.push(g);
        }
        cfg.tick = s.tick_s;
        cfg.snapshot_interval = s.snapshot_s;
        cfg.duration = s.duration_s;
        cfg.max_time = s.max_time_s;
        cfg.rng_seed = s.rng_seed;
        cfg.join_spread = s.join_spread_s;
        cfg.agent.rechoke_period = s.rechoke_s;
        cfg.agent.optimistic_unchoke = s.optimistic_unchoke;
        cfg.agent.pipeline_depth = s.pipeline_depth;
        cfg.delay.control_floor = s.control_floor;
        cfg.delay.base_latency = s.base_latency_s;
        cfg.message_overhead = s.message_overhead_b;
        Ok(cfg)
    }

    /// Planner inputs: leechers per node and the (shared) per-peer caps.
    pub fn to_plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let mut peers = vec![0u64; self.cluster.nodes.len()];
        for p in &self.peers {
            let slot = peers
                .get_mut(p.node as usize)
                .ok_or_else(|| ConfigError::Invalid(format!("peers placed on unknown node {}", p.node)))?;
            *slot += p.count as u64;
        }
        let first = self
            .peers
            .first()
            .ok_or_else(|| ConfigError::Invalid("plan needs at least one [[peers]] group".into()))?;
        if self
            .peers
            .iter()
            .any(|p| p.ul_cap_mbps != first.ul_cap_mbps || p.dl_cap_mbps != first.dl_cap_mbps)
        {
            return Err(ConfigError::Invalid("planning assumes the same caps for every peer group".into()));
        }
        let mut plan = ExperimentPlan::new(self.node_specs(), peers);
        plan.max_upload = first.ul_cap_mbps.map(mbps);
        plan.max_download = first.dl_cap_mbps.map(mbps);
        plan.observed_rate = self.plan.as_ref().and_then(|p| p.observed_dl_mbps).map(mbps);
        Ok(plan)
    }

    /// Copy with every peer group resized to `m` leechers.
    pub fn with_group_size(&self, m: u32) -> Self {
        let mut c = self.clone();
        for p in &mut c.peers {
            p.count = m;
        }
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.sim.rng_seed = seed;
        c
    }
}
