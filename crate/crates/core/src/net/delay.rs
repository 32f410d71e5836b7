use serde::{Deserialize, Serialize};

use super::NodeUsage;
use crate::NodeId;

/// Knobs of the control-message queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayParams {
    /// Propagation plus processing latency, seconds.
    pub base_latency: f64,
    /// Share of link capacity always left to control traffic.
    pub control_floor: f64,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            base_latency: 1e-3,
            control_floor: 0.01,
        }
    }
}

/// One shared resource as seen by control traffic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub capacity: f64,
    /// Charged data rate from the latest allocation.
    pub data_rate: f64,
    /// Control bytes queued and not yet drained.
    pub backlog: f64,
}

impl LinkState {
    pub fn new(capacity: f64) -> Self {
        LinkState {
            capacity,
            data_rate: 0.0,
            backlog: 0.0,
        }
    }

    /// Capacity left over for control traffic.
    pub fn residual(&self, params: &DelayParams) -> f64 {
        (self.capacity - self.data_rate).max(params.control_floor * self.capacity)
    }

    /// Drains `dt` seconds worth of the control backlog.
    pub fn drain(&mut self, dt: f64, params: &DelayParams) {
        self.backlog = (self.backlog - self.residual(params) * dt).max(0.0);
    }
}

/// Queueing delay of a control message behind data and earlier control
/// traffic on `link`. The message is appended to the link backlog.
pub fn control_delay(message_size: f64, link: &mut LinkState, params: &DelayParams) -> f64 {
    debug_assert!(message_size > 0.0);
    let residual = link.residual(params);
    let delay = params.base_latency + (link.backlog + message_size) / residual;
    link.backlog += message_size;
    delay
}

/// Control-traffic view of a whole cluster: loopback, NIC up and NIC down
/// links for every node.
#[derive(Debug, Clone)]
pub struct ControlPlane {
    params: DelayParams,
    loopback: Vec<LinkState>,
    nic_up: Vec<LinkState>,
    nic_down: Vec<LinkState>,
}

impl ControlPlane {
    pub fn new(nodes: &[super::NodeSpec], params: DelayParams) -> Self {
        ControlPlane {
            params,
            loopback: nodes.iter().map(|n| LinkState::new(n.loopback)).collect(),
            nic_up: nodes.iter().map(|n| LinkState::new(n.nic_up)).collect(),
            nic_down: nodes.iter().map(|n| LinkState::new(n.nic_down)).collect(),
        }
    }

    pub fn params(&self) -> &DelayParams {
        &self.params
    }

    /// Refreshes data rates from an allocation and drains one tick.
    pub fn update(&mut self, usage: &[NodeUsage], dt: f64) {
        for (i, u) in usage.iter().enumerate() {
            self.loopback[i].data_rate = u.loopback;
            self.nic_up[i].data_rate = u.nic_up;
            self.nic_down[i].data_rate = u.nic_down;
        }
        let p = self.params;
        for l in self.loopback.iter_mut().chain(&mut self.nic_up).chain(&mut self.nic_down) {
            l.drain(dt, &p);
        }
    }

    /// Delay of a message between two nodes. Native messages queue on the
    /// loopback; foreign ones on both NIC directions and see the slower one.
    pub fn send(&mut self, src: NodeId, dst: NodeId, size: f64) -> f64 {
        let p = self.params;
        if src == dst {
            control_delay(size, &mut self.loopback[src.index()], &p)
        } else {
            let up = control_delay(size, &mut self.nic_up[src.index()], &p);
            let down = control_delay(size, &mut self.nic_down[dst.index()], &p);
            up.max(down)
        }
    }

    pub fn loopback(&self, node: NodeId) -> &LinkState {
        &self.loopback[node.index()]
    }

    pub fn nic_up(&self, node: NodeId) -> &LinkState {
        &self.nic_up[node.index()]
    }

    pub fn nic_down(&self, node: NodeId) -> &LinkState {
        &self.nic_down[node.index()]
    }
}
