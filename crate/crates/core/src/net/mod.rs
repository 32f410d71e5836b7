//! Fluid network model of a cluster.
//!
//! Every node has a loopback device and a full-duplex NIC. Traffic between
//! two peers on the same node (native) crosses the loopback device and is
//! charged twice, once for the send and once for the receive; traffic
//! between nodes (foreign) is charged once on the sender's NIC uplink and
//! once on the receiver's NIC downlink. On top of that each peer may have
//! its own upload and download cap.

mod alloc;
mod delay;

pub use alloc::{allocate_rates, Allocation, NodeUsage};
pub use delay::{control_delay, ControlPlane, DelayParams, LinkState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{NodeId, PeerId};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("flow {flow} references unknown node {node}")]
    UnknownNode { flow: usize, node: NodeId },
    #[error("flow {flow} references unknown peer {peer}")]
    UnknownPeer { flow: usize, peer: PeerId },
    #[error("flow {flow} endpoint {peer} is placed on node {actual}, not {claimed}")]
    MisplacedPeer {
        flow: usize,
        peer: PeerId,
        claimed: NodeId,
        actual: NodeId,
    },
    #[error("node {0} has a non-positive capacity")]
    BadCapacity(NodeId),
    #[error("flow {0} is not bounded by any resource")]
    Unbounded(usize),
}

/// Physical node: loopback capacity and NIC capacities, all in bytes/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub loopback: f64,
    pub nic_up: f64,
    pub nic_down: f64,
}

impl NodeSpec {
    pub fn new(id: NodeId, loopback: f64, nic_up: f64, nic_down: f64) -> Self {
        NodeSpec {
            id,
            loopback,
            nic_up,
            nic_down,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    Native,
    Foreign,
}

/// A fluid data transfer from one peer to another.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub src_peer: PeerId,
    pub dst_peer: PeerId,
    pub src_node: NodeId,
    pub dst_node: NodeId,
    /// Upper bound on the rate this flow can use, `None` for unbounded.
    pub demand: Option<f64>,
}

impl Flow {
    pub fn new(src_peer: PeerId, src_node: NodeId, dst_peer: PeerId, dst_node: NodeId, demand: Option<f64>) -> Self {
        Flow {
            src_peer,
            dst_peer,
            src_node,
            dst_node,
            demand,
        }
    }

    pub fn is_native(&self) -> bool {
        self.src_node == self.dst_node
    }
}

/// Native when both endpoints share a node.
pub fn classify_flow(flow: &Flow) -> FlowKind {
    if flow.is_native() {
        FlowKind::Native
    } else {
        FlowKind::Foreign
    }
}

/// Nodes, per-peer caps and the set of active flows competing for them.
#[derive(Debug, Clone, Default)]
pub struct ResourceGraph {
    pub nodes: Vec<NodeSpec>,
    /// Node hosting each peer, indexed by `PeerId`.
    pub peer_node: Vec<NodeId>,
    pub peer_up_cap: Vec<Option<f64>>,
    pub peer_down_cap: Vec<Option<f64>>,
    pub flows: Vec<Flow>,
}

impl ResourceGraph {
    pub fn new(nodes: Vec<NodeSpec>) -> Self {
        ResourceGraph {
            nodes,
            ..Default::default()
        }
    }

    /// Adds a peer and returns its id (peers are numbered densely).
    pub fn add_peer(&mut self, node: NodeId, up_cap: Option<f64>, down_cap: Option<f64>) -> PeerId {
        let id = PeerId(self.peer_node.len() as u32);
        self.peer_node.push(node);
        self.peer_up_cap.push(up_cap);
        self.peer_down_cap.push(down_cap);
        id
    }

    pub fn peer_count(&self) -> usize {
        self.peer_node.len()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        for n in &self.nodes {
            if !(n.loopback > 0.0 && n.nic_up > 0.0 && n.nic_down > 0.0) {
                return Err(NetError::BadCapacity(n.id));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            for node in [f.src_node, f.dst_node] {
                if node.index() >= self.nodes.len() {
                    return Err(NetError::UnknownNode { flow: i, node });
                }
            }
            for (peer, claimed) in [(f.src_peer, f.src_node), (f.dst_peer, f.dst_node)] {
                let Some(&actual) = self.peer_node.get(peer.index()) else {
                    return Err(NetError::UnknownPeer { flow: i, peer });
                };
                if actual != claimed {
                    return Err(NetError::MisplacedPeer {
                        flow: i,
                        peer,
                        claimed,
                        actual,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        let native = Flow::new(PeerId(0), NodeId(0), PeerId(1), NodeId(0), None);
        let foreign = Flow::new(PeerId(0), NodeId(0), PeerId(1), NodeId(1), None);
        assert_eq!(classify_flow(&native), FlowKind::Native);
        assert_eq!(classify_flow(&foreign), FlowKind::Foreign);
    }

    #[test]
    fn single_node_flows_are_all_native() {
        let mut g = ResourceGraph::new(vec![NodeSpec::new(NodeId(0), 1.0, 1.0, 1.0)]);
        let peers: Vec<_> = (0..5).map(|_| g.add_peer(NodeId(0), None, None)).collect();
        for a in &peers {
            for b in &peers {
                if a != b {
                    let f = Flow::new(*a, NodeId(0), *b, NodeId(0), None);
                    assert_eq!(classify_flow(&f), FlowKind::Native);
                }
            }
        }
    }

    #[test]
    fn validation_errors() {
        let mut g = ResourceGraph::new(vec![NodeSpec::new(NodeId(0), 1.0, 1.0, 1.0)]);
        let a = g.add_peer(NodeId(0), None, None);
        g.flows.push(Flow::new(a, NodeId(0), PeerId(7), NodeId(0), None));
        assert!(matches!(g.validate(), Err(NetError::UnknownPeer { .. })));
        g.flows[0] = Flow::new(a, NodeId(0), a, NodeId(3), None);
        assert!(matches!(g.validate(), Err(NetError::UnknownNode { .. })));
        let b = g.add_peer(NodeId(0), None, None);
        g.flows[0] = Flow::new(a, NodeId(0), b, NodeId(0), None);
        assert_eq!(g.validate(), Ok(()));
    }
}
