//! Central registry handing out random peer lists.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::{NodeId, PeerId};

/// Peers per list handed out by the tracker.
pub const DEFAULT_LIST_SIZE: usize = 40;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrackerError {
    #[error("peer {0} is already registered")]
    Duplicate(PeerId),
    #[error("peer {0} is not registered")]
    Unknown(PeerId),
}

#[derive(Debug, Clone, Default)]
pub struct Tracker {
    peers: Vec<(PeerId, NodeId)>,
    index: HashMap<PeerId, usize>,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, peer: PeerId, node: NodeId) -> Result<(), TrackerError> {
        if self.index.contains_key(&peer) {
            return Err(TrackerError::Duplicate(peer));
        }
        self.index.insert(peer, self.peers.len());
        self.peers.push((peer, node));
        Ok(())
    }

    pub fn deregister(&mut self, peer: PeerId) -> Result<(), TrackerError> {
        let pos = self.index.remove(&peer).ok_or(TrackerError::Unknown(peer))?;
        self.peers.remove(pos);
        for (i, (p, _)) in self.peers.iter().enumerate().skip(pos) {
            self.index.insert(*p, i);
        }
        Ok(())
    }

    pub fn swarm_size(&self) -> usize {
        self.peers.len()
    }

    pub fn node_of(&self, peer: PeerId) -> Option<NodeId> {
        self.index.get(&peer).map(|&i| self.peers[i].1)
    }

    /// Up to `list_size` registered peers other than `requester`, drawn
    /// uniformly without replacement.
    pub fn peer_list<R: Rng + ?Sized>(
        &self,
        requester: PeerId,
        list_size: usize,
        rng: &mut R,
    ) -> Result<Vec<PeerId>, TrackerError> {
        let own = *self.index.get(&requester).ok_or(TrackerError::Unknown(requester))?;
        let others = self.peers.len() - 1;
        let k = list_size.min(others);
        Ok(sample(rng, others, k)
            .into_iter()
            .map(|i| if i >= own { i + 1 } else { i })
            .map(|i| self.peers[i].0)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn swarm(n: u32, nodes: u32) -> Tracker {
        let mut t = Tracker::new();
        for i in 0..n {
            t.register(PeerId(i), NodeId(i % nodes)).unwrap();
        }
        t
    }

    #[test]
    fn registration_counts() {
        let mut t = Tracker::new();
        assert_eq!(t.swarm_size(), 0);
        t.register(PeerId(0), NodeId(0)).unwrap();
        assert_eq!(t.swarm_size(), 1);
        let t2 = swarm(17, 1);
        assert_eq!(t2.swarm_size(), 17);
        assert_eq!(t.register(PeerId(0), NodeId(1)), Err(TrackerError::Duplicate(PeerId(0))));
    }

    #[test]
    fn deregistration() {
        let mut t = swarm(5, 1);
        t.deregister(PeerId(2)).unwrap();
        assert_eq!(t.swarm_size(), 4);
        assert_eq!(t.deregister(PeerId(2)), Err(TrackerError::Unknown(PeerId(2))));
        assert_eq!(t.node_of(PeerId(4)), Some(NodeId(0)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let list = t.peer_list(PeerId(4), 40, &mut rng).unwrap();
        assert_eq!(list.len(), 3);
        assert!(!list.contains(&PeerId(2)));
    }

    #[test]
    fn small_swarm_gets_everyone_else() {
        let t = swarm(30, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut list = t.peer_list(PeerId(5), 40, &mut rng).unwrap();
        list.sort();
        let expected: Vec<_> = (0..30).filter(|&i| i != 5).map(PeerId).collect();
        assert_eq!(list, expected);
    }

    #[test]
    fn unknown_requester() {
        let t = swarm(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t.peer_list(PeerId(9), 40, &mut rng), Err(TrackerError::Unknown(PeerId(9))));
    }

    #[test]
    fn requester_never_listed() {
        let t = swarm(60, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..10_000u32 {
            let me = PeerId(i % 60);
            let list = t.peer_list(me, 40, &mut rng).unwrap();
            assert!(!list.contains(&me));
            let mut dedup = list.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), list.len());
        }
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // each of the 99 others should appear with p = 40/99; 5000 draws
        // give sd ~ 34.7 per peer, allow 5 sd
        let t = swarm(100, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = vec![0u32; 100];
        let draws = 5000;
        for _ in 0..draws {
            for p in t.peer_list(PeerId(0), 40, &mut rng).unwrap() {
                hits[p.index()] += 1;
            }
        }
        let p = 40.0 / 99.0;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(hits[0], 0);
        for h in &hits[1..] {
            assert!((*h as f64 - mean).abs() < 5.0 * sd, "{h} vs {mean}");
        }
    }
}
