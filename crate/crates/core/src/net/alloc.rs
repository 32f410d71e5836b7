use super::{NetError, ResourceGraph};

/// Charged traffic per node after allocation, bytes/s.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeUsage {
    /// Loopback charge: twice the native throughput.
    pub loopback: f64,
    pub nic_up: f64,
    pub nic_down: f64,
}

/// Result of [`allocate_rates`]: one rate per flow, in flow order.
#[derive(Debug, Clone, Default)]
pub struct Allocation {
    pub rates: Vec<f64>,
    pub node_usage: Vec<NodeUsage>,
}

impl Allocation {
    pub fn rate(&self, flow: usize) -> f64 {
        self.rates[flow]
    }
}

const SATURATED: f64 = 1e-12;

struct Layout {
    peers: usize,
}

impl Layout {
    fn peer_up(&self, p: usize) -> usize {
        p
    }
    fn peer_down(&self, p: usize) -> usize {
        self.peers + p
    }
    fn loopback(&self, n: usize) -> usize {
        2 * self.peers + 3 * n
    }
    fn nic_up(&self, n: usize) -> usize {
        2 * self.peers + 3 * n + 1
    }
    fn nic_down(&self, n: usize) -> usize {
        2 * self.peers + 3 * n + 2
    }
}

/// Max-min fair rates by progressive filling.
///
/// All unfrozen flows grow at the same level. A flow freezes when it reaches
/// its demand or when any resource it charges saturates. Native flows charge
/// the loopback with weight 2, everything else with weight 1.
pub fn allocate_rates(graph: &ResourceGraph) -> Result<Allocation, NetError> {
    graph.validate()?;
    let n_flows = graph.flows.len();
    let n_peers = graph.peer_count();
    let lay = Layout { peers: n_peers };
    let n_res = 2 * n_peers + 3 * graph.nodes.len();

    let mut cap = vec![f64::INFINITY; n_res];
    for p in 0..n_peers {
        if let Some(c) = graph.peer_up_cap[p] {
            cap[lay.peer_up(p)] = c;
        }
        if let Some(c) = graph.peer_down_cap[p] {
            cap[lay.peer_down(p)] = c;
        }
    }
    for (i, n) in graph.nodes.iter().enumerate() {
        cap[lay.loopback(i)] = n.loopback;
        cap[lay.nic_up(i)] = n.nic_up;
        cap[lay.nic_down(i)] = n.nic_down;
    }

    // (resource, weight) charged by each flow; at most four entries
    let mut charges: Vec<[(u32, f64); 4]> = Vec::with_capacity(n_flows);
    let mut charge_len: Vec<u8> = Vec::with_capacity(n_flows);
    for f in &graph.flows {
        let mut c = [(0u32, 0.0); 4];
        let mut k = 0;
        let mut push = |r: usize, w: f64| {
            if cap[r].is_finite() {
                c[k] = (r as u32, w);
                k += 1;
            }
        };
        push(lay.peer_up(f.src_peer.index()), 1.0);
        push(lay.peer_down(f.dst_peer.index()), 1.0);
        if f.is_native() {
            push(lay.loopback(f.src_node.index()), 2.0);
        } else {
            push(lay.nic_up(f.src_node.index()), 1.0);
            push(lay.nic_down(f.dst_node.index()), 1.0);
        }
        charges.push(c);
        charge_len.push(k as u8);
    }

    // resource -> flows adjacency (CSR)
    let mut start = vec![0usize; n_res + 1];
    for (fi, c) in charges.iter().enumerate() {
        for &(r, _) in &c[..charge_len[fi] as usize] {
            start[r as usize + 1] += 1;
        }
    }
    for r in 0..n_res {
        start[r + 1] += start[r];
    }
    let mut fill = start.clone();
    let mut adj = vec![0u32; start[n_res]];
    for (fi, c) in charges.iter().enumerate() {
        for &(r, _) in &c[..charge_len[fi] as usize] {
            adj[fill[r as usize]] = fi as u32;
            fill[r as usize] += 1;
        }
    }

    let mut rates = vec![0.0; n_flows];
    let mut frozen = vec![false; n_flows];
    let mut rem = cap.clone();
    let mut wsum = vec![0.0; n_res];
    let mut active = 0usize;
    for (fi, f) in graph.flows.iter().enumerate() {
        if matches!(f.demand, Some(d) if d <= 0.0) {
            frozen[fi] = true;
            continue;
        }
        if charge_len[fi] == 0 && f.demand.is_none() {
            return Err(NetError::Unbounded(fi));
        }
        active += 1;
        for &(r, w) in &charges[fi][..charge_len[fi] as usize] {
            wsum[r as usize] += w;
        }
    }
    let mut by_demand: Vec<u32> = (0..n_flows as u32)
        .filter(|&f| !frozen[f as usize] && graph.flows[f as usize].demand.is_some())
        .collect();
    by_demand.sort_by(|&a, &b| {
        let da = graph.flows[a as usize].demand.unwrap();
        let db = graph.flows[b as usize].demand.unwrap();
        da.total_cmp(&db).then(a.cmp(&b))
    });
    let mut live: Vec<u32> = (0..n_res as u32).filter(|&r| wsum[r as usize] > 0.0).collect();

    let mut level = 0.0f64;
    let mut next_demand = 0usize;
    let freeze = |fi: usize, rate: f64, frozen: &mut [bool], wsum: &mut [f64], rates: &mut [f64]| {
        frozen[fi] = true;
        rates[fi] = rate;
        for &(r, w) in &charges[fi][..charge_len[fi] as usize] {
            wsum[r as usize] -= w;
        }
    };

    while active > 0 {
        while next_demand < by_demand.len() && frozen[by_demand[next_demand] as usize] {
            next_demand += 1;
        }
        let mut inc = f64::INFINITY;
        if let Some(&f) = by_demand.get(next_demand) {
            inc = graph.flows[f as usize].demand.unwrap() - level;
        }
        live.retain(|&r| wsum[r as usize] > 0.0);
        for &r in &live {
            let r = r as usize;
            inc = inc.min(rem[r] / wsum[r]);
        }
        debug_assert!(inc.is_finite());
        let inc = inc.max(0.0);
        level += inc;
        for &r in &live {
            let r = r as usize;
            rem[r] -= inc * wsum[r];
        }

        while next_demand < by_demand.len() {
            let f = by_demand[next_demand] as usize;
            if frozen[f] {
                next_demand += 1;
                continue;
            }
            let d = graph.flows[f].demand.unwrap();
            if d > level * (1.0 + SATURATED) {
                break;
            }
            freeze(f, d, &mut frozen, &mut wsum, &mut rates);
            active -= 1;
            next_demand += 1;
        }
        for &r in &live {
            let r = r as usize;
            if wsum[r] > 0.0 && rem[r] <= SATURATED * cap[r] {
                rem[r] = rem[r].max(0.0);
                for &f in &adj[start[r]..start[r + 1]] {
                    let f = f as usize;
                    if !frozen[f] {
                        freeze(f, level, &mut frozen, &mut wsum, &mut rates);
                        active -= 1;
                    }
                }
            }
        }
    }

    let mut node_usage = vec![NodeUsage::default(); graph.nodes.len()];
    for (f, &rate) in graph.flows.iter().zip(&rates) {
        if f.is_native() {
            node_usage[f.src_node.index()].loopback += 2.0 * rate;
        } else {
            node_usage[f.src_node.index()].nic_up += rate;
            node_usage[f.dst_node.index()].nic_down += rate;
        }
    }
    Ok(Allocation { rates, node_usage })
}
