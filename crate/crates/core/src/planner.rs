//! Analytical capacity planning for swarms spread over several nodes.
//!
//! Peers pick buddies uniformly from the whole swarm, so a peer on node `i`
//! connects to node `j` with probability proportional to the peers there.
//! Multiplying by the node's aggregate upload or download limit gives a
//! node-to-node traffic matrix, which is then compared against NIC and
//! loopback capacities.

use std::fmt;

use thiserror::Error;

use crate::net::NodeSpec;
use crate::units::MB;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan has no nodes")]
    NoNodes,
    #[error("node {0} has no peers")]
    EmptyNode(usize),
    #[error("at least two peers are needed, got {0}")]
    TooFewPeers(u64),
    #[error("node index {index} out of range for {nodes} nodes")]
    BadIndex { index: usize, nodes: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("both upload and download are unlimited and no observed download rate was given")]
    Unbounded,
    #[error("traffic matrix is {got}x{got}, plan has {want} nodes")]
    DimensionMismatch { got: usize, want: usize },
    #[error("naive fit needs at least two samples with positive peers and rate")]
    DegenerateSamples,
}

/// Inputs of the analytical model. Caps are per peer, in bytes/s, and the
/// same for every peer in the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub nodes: Vec<NodeSpec>,
    /// Leechers per node, aligned with `nodes`.
    pub peers: Vec<u64>,
    pub max_upload: Option<f64>,
    pub max_download: Option<f64>,
    /// Per-peer rate standing in for whichever direction is unlimited.
    pub observed_rate: Option<f64>,
}

impl ExperimentPlan {
    pub fn new(nodes: Vec<NodeSpec>, peers: Vec<u64>) -> Self {
        ExperimentPlan {
            nodes,
            peers,
            max_upload: None,
            max_download: None,
            observed_rate: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn total_peers(&self) -> u64 {
        self.peers.iter().sum()
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.nodes.is_empty() {
            return Err(PlanError::NoNodes);
        }
        if self.peers.len() != self.nodes.len() {
            return Err(PlanError::DimensionMismatch {
                got: self.peers.len(),
                want: self.nodes.len(),
            });
        }
        if let Some(i) = self.peers.iter().position(|&m| m == 0) {
            return Err(PlanError::EmptyNode(i));
        }
        if self.total_peers() < 2 {
            return Err(PlanError::TooFewPeers(self.total_peers()));
        }
        let positive = |v: Option<f64>, what| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(PlanError::NonPositive(what)),
            _ => Ok(()),
        };
        positive(self.max_upload, "upload cap")?;
        positive(self.max_download, "download cap")?;
        positive(self.observed_rate, "observed rate")?;
        for n in &self.nodes {
            if !(n.loopback > 0.0 && n.nic_up > 0.0 && n.nic_down > 0.0) {
                return Err(PlanError::NonPositive("node capacity"));
            }
        }
        Ok(())
    }

    /// Aggregate upload limit U_i of node `i`.
    pub fn node_upload(&self, i: usize) -> Option<f64> {
        self.max_upload.or(self.observed_rate).map(|r| r * self.peers[i] as f64)
    }

    /// Aggregate download limit D_i of node `i`.
    pub fn node_download(&self, i: usize) -> Option<f64> {
        self.max_download.or(self.observed_rate).map(|r| r * self.peers[i] as f64)
    }
}

/// Probability that a buddy of a peer on node `i` lives on node `j`.
pub fn connection_prob(plan: &ExperimentPlan, i: usize, j: usize) -> Result<f64, PlanError> {
    let n = plan.peers.len();
    for index in [i, j] {
        if index >= n {
            return Err(PlanError::BadIndex { index, nodes: n });
        }
    }
    let total = plan.total_peers();
    if total < 2 {
        return Err(PlanError::TooFewPeers(total));
    }
    let same = if i == j { 1 } else { 0 };
    Ok((plan.peers[j] - same) as f64 / (total - 1) as f64)
}

/// Square matrix of node-to-node rates, bytes/s. Row = sender.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    rates: Vec<Vec<f64>>,
}

impl TrafficMatrix {
    pub fn from_rows(rates: Vec<Vec<f64>>) -> Self {
        assert!(rates.iter().all(|r| r.len() == rates.len()), "traffic matrix must be square");
        TrafficMatrix { rates }
    }

    pub fn zeros(n: usize) -> Self {
        TrafficMatrix {
            rates: vec![vec![0.0; n]; n],
        }
    }

    pub fn size(&self) -> usize {
        self.rates.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rates[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rates
    }

    /// Traffic leaving node `i` over its NIC.
    pub fn foreign_out(&self, i: usize) -> f64 {
        (0..self.size()).filter(|&j| j != i).map(|j| self.rates[i][j]).sum()
    }

    /// Traffic entering node `j` over its NIC.
    pub fn foreign_in(&self, j: usize) -> f64 {
        (0..self.size()).filter(|&i| i != j).map(|i| self.rates[i][j]).sum()
    }
}

/// T_ij = P_ij * min(U_i, D_j). Traffic from the original seed is ignored.
pub fn traffic_matrix(plan: &ExperimentPlan) -> Result<TrafficMatrix, PlanError> {
    plan.validate()?;
    let n = plan.node_count();
    let mut rates = vec![vec![0.0; n]; n];
    for (i, row) in rates.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let limit = match (plan.node_upload(i), plan.node_download(j)) {
                (Some(u), Some(d)) => u.min(d),
                (Some(x), None) | (None, Some(x)) => x,
                (None, None) => return Err(PlanError::Unbounded),
            };
            *cell = connection_prob(plan, i, j)? * limit;
        }
    }
    Ok(TrafficMatrix { rates })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    /// Foreign traffic into the node vs. NIC download capacity.
    NicIn,
    /// Foreign traffic out of the node vs. NIC upload capacity.
    NicOut,
    /// Native traffic vs. half the loopback (each byte crosses it twice).
    Loopback,
    /// Whole-node upload limit vs. NIC upload, whatever the buddy mix.
    WorstCaseUpload,
    /// Whole-node download limit vs. NIC download.
    WorstCaseDownload,
    /// min(U, D) vs. half the loopback.
    WorstCaseLoopback,
}

impl CheckKind {
    /// Worst-case checks hold for any buddy distribution. They are reported
    /// for reference and do not decide the verdict.
    pub fn is_worst_case(self) -> bool {
        matches!(
            self,
            CheckKind::WorstCaseUpload | CheckKind::WorstCaseDownload | CheckKind::WorstCaseLoopback
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            CheckKind::NicIn => "NIC-in",
            CheckKind::NicOut => "NIC-out",
            CheckKind::Loopback => "loopback",
            CheckKind::WorstCaseUpload => "worst-case upload",
            CheckKind::WorstCaseDownload => "worst-case download",
            CheckKind::WorstCaseLoopback => "worst-case loopback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Check {
    pub node: usize,
    pub kind: CheckKind,
    pub load: f64,
    pub limit: f64,
}

impl Check {
    pub fn slack(&self) -> f64 {
        self.limit - self.load
    }

    pub fn holds(&self) -> bool {
        self.load <= self.limit
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub probabilities: Vec<Vec<f64>>,
    pub traffic: TrafficMatrix,
    pub checks: Vec<Check>,
}

impl PlanReport {
    /// Checks that decide the verdict.
    pub fn upper_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.kind.is_worst_case())
    }

    pub fn violations(&self) -> impl Iterator<Item = &Check> {
        self.upper_checks().filter(|c| !c.holds())
    }

    pub fn is_safe(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn violated(&self, node: usize, kind: CheckKind) -> bool {
        self.checks.iter().any(|c| c.node == node && c.kind == kind && !c.holds())
    }
}

/// Evaluates every inequality of the model against the node capacities.
pub fn check_constraints(t: &TrafficMatrix, plan: &ExperimentPlan) -> Result<PlanReport, PlanError> {
    let n = plan.node_count();
    if t.size() != n {
        return Err(PlanError::DimensionMismatch { got: t.size(), want: n });
    }
    let mut checks = Vec::with_capacity(6 * n);
    for (i, ns) in plan.nodes.iter().enumerate() {
        let mut push = |kind, load, limit| checks.push(Check { node: i, kind, load, limit });
        push(CheckKind::NicIn, t.foreign_in(i), ns.nic_down);
        push(CheckKind::NicOut, t.foreign_out(i), ns.nic_up);
        push(CheckKind::Loopback, t.get(i, i), ns.loopback / 2.0);
        let u = plan.node_upload(i);
        let d = plan.node_download(i);
        if let Some(u) = u {
            push(CheckKind::WorstCaseUpload, u, ns.nic_up);
        }
        if let Some(d) = d {
            push(CheckKind::WorstCaseDownload, d, ns.nic_down);
        }
        let both = match (u, d) {
            (Some(u), Some(d)) => Some(u.min(d)),
            (x, None) | (None, x) => x,
        };
        if let Some(x) = both {
            push(CheckKind::WorstCaseLoopback, x, ns.loopback / 2.0);
        }
    }
    let probabilities = (0..n)
        .map(|i| (0..n).map(|j| connection_prob(plan, i, j)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlanReport {
        probabilities,
        traffic: t.clone(),
        checks,
    })
}

/// Traffic matrix plus report in one call.
pub fn plan_report(plan: &ExperimentPlan) -> Result<PlanReport, PlanError> {
    let t = traffic_matrix(plan)?;
    check_constraints(&t, plan)
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.traffic.size();
        writeln!(f, "connection probabilities P[i][j]:")?;
        for row in &self.probabilities {
            let cells: Vec<String> = row.iter().map(|p| format!("{p:.4}")).collect();
            writeln!(f, "  {}", cells.join("  "))?;
        }
        writeln!(f, "traffic matrix T[i][j] (MB/s, row = sender):")?;
        for row in self.traffic.rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{:.1}", x / MB)).collect();
            writeln!(f, "  {}", cells.join("  "))?;
        }
        writeln!(f, "constraints (MB/s):")?;
        for c in &self.checks {
            let verdict = match (c.holds(), c.kind.is_worst_case()) {
                (true, _) => "ok",
                (false, false) => "VIOLATED",
                (false, true) => "exceeded (informational)",
            };
            writeln!(
                f,
                "  node {} {:<20} load {:>8.1}  limit {:>8.1}  slack {:>8.1}  {}",
                c.node,
                c.kind.label(),
                c.load / MB,
                c.limit / MB,
                c.slack() / MB,
                verdict
            )?;
        }
        let bad: Vec<String> = self
            .violations()
            .map(|c| format!("{} on node {}", c.kind.label(), c.node))
            .collect();
        if bad.is_empty() {
            writeln!(f, "verdict: SAFE, all {n}-node capacity bounds hold")
        } else {
            writeln!(f, "verdict: VIOLATED, {}", bad.join(", "))
        }
    }
}

/// Least-squares fit of `rate = a / peers` to single-node probe results.
/// Returns `a` in (bytes/s) x peers.
pub fn naive_fit(samples: &[(f64, f64)]) -> Result<f64, PlanError> {
    if samples.len() < 2 || samples.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(PlanError::DegenerateSamples);
    }
    let (num, den) = samples
        .iter()
        .fold((0.0, 0.0), |(n, d), &(x, y)| (n + y / x, d + 1.0 / (x * x)));
    Ok(num / den)
}

/// Peers a single node supports at `rate` given a fitted constant.
pub fn naive_max_peers(a: f64, rate: f64) -> Result<u64, PlanError> {
    if !(a > 0.0) {
        return Err(PlanError::NonPositive("fit constant"));
    }
    if !(rate > 0.0) {
        return Err(PlanError::NonPositive("rate"));
    }
    // tolerate representation error in exact quotients such as 560/5
    Ok((a / rate * (1.0 + 1e-12)).floor() as u64)
}
