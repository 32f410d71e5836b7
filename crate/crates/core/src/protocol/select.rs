use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AvailabilityTable, Bitfield};

/// Piece selection policy of a peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceStrategy {
    Rarest,
    Random,
}

/// Word-level iterator over candidate pieces: held by the buddy, missing
/// locally and not already in flight.
fn candidate_words<'a>(
    local: &'a Bitfield,
    remote: &'a Bitfield,
    in_flight: &'a Bitfield,
) -> impl Iterator<Item = (u32, u64)> + 'a {
    debug_assert_eq!(local.len(), remote.len());
    debug_assert_eq!(local.len(), in_flight.len());
    local
        .words()
        .iter()
        .zip(remote.words())
        .zip(in_flight.words())
        .enumerate()
        .map(|(i, ((l, r), f))| (i as u32 * 64, r & !l & !f))
        .filter(|(_, w)| *w != 0)
}

/// Local rarest-first: among the pieces the buddy has and we still need,
/// pick one with minimal availability, breaking ties uniformly at random.
pub fn rarest_first_select<R: Rng + ?Sized>(
    local: &Bitfield,
    avail: &AvailabilityTable,
    remote: &Bitfield,
    in_flight: &Bitfield,
    rng: &mut R,
) -> Option<u32> {
    let mut best = u32::MAX;
    let mut ties = 0u32;
    let mut pick = None;
    for (base, mut w) in candidate_words(local, remote, in_flight) {
        while w != 0 {
            let piece = base + w.trailing_zeros();
            w &= w - 1;
            let c = avail.get(piece);
            if c < best {
                best = c;
                ties = 1;
                pick = Some(piece);
            } else if c == best {
                // reservoir sampling over the current minimum set
                ties += 1;
                if rng.gen_range(0..ties) == 0 {
                    pick = Some(piece);
                }
            }
        }
    }
    pick
}

/// Uniform choice among all candidate pieces.
pub fn random_select<R: Rng + ?Sized>(
    local: &Bitfield,
    remote: &Bitfield,
    in_flight: &Bitfield,
    rng: &mut R,
) -> Option<u32> {
    let total: u32 = candidate_words(local, remote, in_flight)
        .map(|(_, w)| w.count_ones())
        .sum();
    if total == 0 {
        return None;
    }
    let mut k = rng.gen_range(0..total);
    for (base, mut w) in candidate_words(local, remote, in_flight) {
        let n = w.count_ones();
        if k >= n {
            k -= n;
            continue;
        }
        for _ in 0..k {
            w &= w - 1;
        }
        return Some(base + w.trailing_zeros());
    }
    unreachable!("candidate count changed between passes")
}
