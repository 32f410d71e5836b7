//! Behaviour of a single swarm member.
//!
//! A [`PeerAgent`] owns everything one client knows: its bitfield, the
//! availability table built from bitfields and HAVEs, and one [`Buddy`]
//! record per connection. It talks to other agents only through
//! [`Message`]s routed by the simulation engine; data itself moves as fluid
//! flows that the engine allocates and feeds back through
//! [`PeerAgent::send_bytes`] and [`PeerAgent::receive_slice`].

mod agent;
mod message;
mod meter;

pub use agent::{AgentEvent, Buddy, Outbox, PeerAgent, Role};
pub use message::Message;
pub use meter::{RateMeter, RATE_WINDOW_SECS};

use serde::{Deserialize, Serialize};

use crate::protocol::{upload_slots_for_cap, PieceStrategy};
use crate::{NodeId, PeerId};

/// What a peer does once it holds the whole file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SeedingPolicy {
    /// Keep seeding until the experiment ends.
    Stay,
    /// Leave the swarm this many seconds after finishing.
    LeaveAfter(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeerConfig {
    pub id: PeerId,
    pub node: NodeId,
    /// Upload cap in bytes/s, `None` for unlimited.
    pub max_upload: Option<f64>,
    pub max_download: Option<f64>,
    /// Explicit upload slot count; `None` derives it from `max_upload`.
    pub slots: Option<u32>,
    pub strategy: PieceStrategy,
    pub join_time: f64,
    pub seeding: SeedingPolicy,
}

impl PeerConfig {
    pub fn new(id: PeerId, node: NodeId) -> Self {
        PeerConfig {
            id,
            node,
            max_upload: None,
            max_download: None,
            slots: None,
            strategy: PieceStrategy::Rarest,
            join_time: 0.0,
            seeding: SeedingPolicy::Stay,
        }
    }

    /// Upload slots in effect: the explicit setting wins over the formula.
    pub fn effective_slots(&self) -> u32 {
        self.slots.unwrap_or_else(|| upload_slots_for_cap(self.max_upload)).max(1)
    }
}

/// Client constants shared by every agent in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    /// Outstanding slice requests per connection.
    pub pipeline_depth: usize,
    /// Stop initiating connections at this many buddies.
    pub target_buddies: usize,
    /// Drop incoming connections at this many buddies.
    pub max_buddies: usize,
    /// Re-announce to the tracker below this many buddies.
    pub refill_threshold: usize,
    /// Minimum spacing between tracker re-announces, seconds.
    pub announce_interval: f64,
    pub rechoke_period: f64,
    pub optimistic_unchoke: bool,
    pub list_size: usize,
}

impl Default for AgentParams {
    fn default() -> Self {
        AgentParams {
            pipeline_depth: 8,
            target_buddies: 40,
            max_buddies: 80,
            refill_threshold: 20,
            announce_interval: 30.0,
            rechoke_period: 30.0,
            optimistic_unchoke: true,
            list_size: crate::tracker::DEFAULT_LIST_SIZE,
        }
    }
}
