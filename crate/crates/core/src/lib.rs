//! Flow-level simulator for BitTorrent swarms packed many-peers-per-node onto
//! a cluster, together with an analytical capacity planner.
//!
//! The crate is organised bottom-up:
//!
//! * [`protocol`] holds the pure BitTorrent algorithms (piece geometry,
//!   upload slots, piece selection, choking).
//! * [`net`] is the fluid network model: max-min fair rate allocation over
//!   per-peer caps, NICs and loopback devices, plus congestion-coupled
//!   control-message delay.
//! * [`tracker`] and [`peer`] model the swarm members.
//! * [`sim`] drives everything on a fixed tick.
//! * [`metrics`] records per-second snapshots and lifecycle events.
//! * [`planner`] evaluates traffic matrices against node capacities.
//! * [`config`] and [`harness`] are the experiment front end used by the CLI.

pub mod config;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod peer;
pub mod planner;
pub mod protocol;
pub mod sim;
pub mod tracker;
pub mod units;

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identifier of a simulated peer (the original seed and every leecher).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeerId(pub u32);

/// Identifier of a physical cluster node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl PeerId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
