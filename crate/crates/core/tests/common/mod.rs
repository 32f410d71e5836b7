//! Oracles shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use swarmcap::metrics::Recorder;
use swarmcap::net::{allocate_rates, Flow, NodeSpec, ResourceGraph};
use swarmcap::peer::Role;
use swarmcap::sim::{SimConfig, Simulation};
use swarmcap::{NodeId, PeerId};

pub type Q = BigRational;

pub fn q(x: u64) -> Q {
    Q::from_integer(BigInt::from(x))
}

pub fn to_f64(x: &Q) -> f64 {
    let (n, d) = (x.numer().to_string(), x.denom().to_string());
    n.parse::<f64>().unwrap() / d.parse::<f64>().unwrap()
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub nodes: Vec<(u64, u64, u64)>,
    pub peers: Vec<(usize, Option<u64>, Option<u64>)>,
    pub flows: Vec<(usize, usize, Option<u64>)>,
}

/// Resources charged by a flow as (resource key, weight); unbounded
/// resources are left out.
fn charges(inst: &Instance, f: usize) -> Vec<(usize, u64, Q)> {
    let (s, d, _) = inst.flows[f];
    let np = inst.peers.len();
    let mut out = Vec::new();
    if let Some(c) = inst.peers[s].1 {
        out.push((s, 1, q(c)));
    }
    if let Some(c) = inst.peers[d].2 {
        out.push((np + d, 1, q(c)));
    }
    let (sn, dn) = (inst.peers[s].0, inst.peers[d].0);
    let base = 2 * np;
    if sn == dn {
        out.push((base + 3 * sn, 2, q(inst.nodes[sn].0)));
    } else {
        out.push((base + 3 * sn + 1, 1, q(inst.nodes[sn].1)));
        out.push((base + 3 * dn + 2, 1, q(inst.nodes[dn].2)));
    }
    out
}

/// Exact progressive filling.
pub fn oracle(inst: &Instance) -> Vec<Q> {
    let n = inst.flows.len();
    let ch: Vec<_> = (0..n).map(|f| charges(inst, f)).collect();
    let mut rate = vec![q(0); n];
    let mut frozen: Vec<bool> = inst.flows.iter().map(|f| f.2 == Some(0)).collect();
    let mut used: std::collections::HashMap<usize, Q> = Default::default();
    while frozen.iter().any(|x| !x) {
        // largest common increment before some flow or resource stops
        let mut step: Option<Q> = None;
        let mut consider = |x: Q| {
            if step.as_ref().is_none_or(|s| x < *s) {
                step = Some(x);
            }
        };
        let mut weights: std::collections::HashMap<usize, (u64, Q)> = Default::default();
        for f in (0..n).filter(|&f| !frozen[f]) {
            if let Some(d) = inst.flows[f].2 {
                consider(q(d) - &rate[f]);
            }
            for (r, w, cap) in &ch[f] {
                let e = weights.entry(*r).or_insert((0, cap.clone()));
                e.0 += w;
            }
        }
        for (r, (w, cap)) in &weights {
            let left = cap - used.get(r).cloned().unwrap_or_else(|| q(0));
            consider(left / q(*w));
        }
        let step = step.expect("instances are bounded");
        for f in (0..n).filter(|&f| !frozen[f]) {
            rate[f] += &step;
            for (r, w, _) in &ch[f] {
                *used.entry(*r).or_insert_with(|| q(0)) += &step * q(*w);
            }
        }
        for f in 0..n {
            if frozen[f] {
                continue;
            }
            let at_demand = inst.flows[f].2.is_some_and(|d| rate[f] >= q(d));
            let at_cap = ch[f].iter().any(|(r, _, cap)| used.get(r).is_some_and(|u| u >= cap));
            if at_demand || at_cap {
                frozen[f] = true;
            }
        }
    }
    rate
}

pub fn graph(inst: &Instance) -> ResourceGraph {
    let nodes = inst
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &(l, u, d))| NodeSpec::new(NodeId(i as u32), l as f64, u as f64, d as f64))
        .collect();
    let mut g = ResourceGraph::new(nodes);
    for &(node, up, down) in &inst.peers {
        g.add_peer(NodeId(node as u32), up.map(|x| x as f64), down.map(|x| x as f64));
    }
    for &(s, d, demand) in &inst.flows {
        let (sn, dn) = (inst.peers[s].0, inst.peers[d].0);
        g.flows.push(Flow::new(
            PeerId(s as u32),
            NodeId(sn as u32),
            PeerId(d as u32),
            NodeId(dn as u32),
            demand.map(|x| x as f64),
        ));
    }
    g
}

pub fn instance() -> impl Strategy<Value = Instance> {
    (1usize..4, 2usize..7)
        .prop_flat_map(|(nn, np)| {
            (
                prop::collection::vec((1u64..1000, 1u64..500, 1u64..500), nn),
                prop::collection::vec((0..nn, prop::option::of(1u64..300), prop::option::of(1u64..300)), np),
                prop::collection::vec((0..np, 0..np, prop::option::of(0u64..200)), 0..=10),
            )
        })
        .prop_map(|(nodes, peers, flows)| {
            let flows = flows.into_iter().filter(|(s, d, _)| s != d).collect();
            Instance { nodes, peers, flows }
        })
}


/// Relative agreement of the allocator with the oracle on one instance.
pub fn allocation_matches(inst: &Instance) -> Result<(), String> {
    let alloc = allocate_rates(&graph(inst)).map_err(|e| e.to_string())?;
    for (f, w) in oracle(inst).iter().enumerate() {
        let w = to_f64(w);
        let got = alloc.rate(f);
        let ok = (got - w).abs() <= 1e-9 * w.abs() || (w == 0.0 && got.abs() < 1e-12);
        if !ok {
            return Err(format!("flow {f}: got {got}, oracle {w}"));
        }
    }
    Ok(())
}

/// Steps a run to the end, checking byte conservation and the availability
/// recount after every tick. Returns the number of ticks.
pub fn check_every_tick(cfg: SimConfig) -> Result<u64, String> {
    let file = cfg.torrent.file_size();
    let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
    let mut rec = Recorder::default();
    loop {
        let done = sim.step(&mut rec).map_err(|e| e.to_string())?;
        let t = sim.ticks();
        let agents = sim.agents();
        let up: u64 = agents.iter().map(|a| a.bytes_up()).sum();
        let down: u64 = agents.iter().map(|a| a.bytes_down()).sum();
        if up != down {
            return Err(format!("tick {t}: {up} bytes sent, {down} received"));
        }
        for a in agents.iter().filter(|a| sim.is_active(a.id())) {
            let mut counts = vec![0u32; a.bitfield().len() as usize];
            for b in a.buddies() {
                let truth = agents[b.id.index()].bitfield();
                for p in b.have.iter_ones() {
                    counts[p as usize] += 1;
                    if !truth.get(p) {
                        return Err(format!("tick {t}: peer {} credits {} with piece {p}", a.id(), b.id));
                    }
                }
                if b.node != agents[b.id.index()].node() {
                    return Err(format!("tick {t}: wrong node for buddy {}", b.id));
                }
                if sim.is_active(b.id) && agents[b.id.index()].buddy(a.id()).is_none() {
                    return Err(format!("tick {t}: one-sided connection {} -> {}", a.id(), b.id));
                }
            }
            if a.availability().counts() != &counts[..] {
                return Err(format!("tick {t}: availability of peer {} differs from recount", a.id()));
            }
            if a.bytes_down() > file || (a.role() == Role::Seed) != a.bitfield().is_complete() {
                return Err(format!("tick {t}: inconsistent state for peer {}", a.id()));
            }
        }
        if done {
            break;
        }
    }
    let summary = sim.summary();
    if !summary.all_complete() {
        return Err("not every leecher finished".into());
    }
    if let Some(p) = summary.leechers(None).find(|p| p.bytes_down != file) {
        return Err(format!("peer {} finished with {} bytes", p.id, p.bytes_down));
    }
    Ok(summary.ticks)
}
