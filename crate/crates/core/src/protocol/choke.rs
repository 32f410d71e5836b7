use std::collections::BTreeSet;

use crate::units::KB;
use crate::PeerId;

/// Number of concurrent uploads the client derives from its maximum upload
/// rate in KB/s. A non-positive rate means unlimited.
pub fn upload_slots(rate_kbps: f64) -> u32 {
    if rate_kbps <= 0.0 {
        7
    } else if rate_kbps < 9.0 {
        2
    } else if rate_kbps < 15.0 {
        3
    } else if rate_kbps < 42.0 {
        4
    } else {
        // truncated toward zero: 5000 KB/s gives 54
        (rate_kbps * 0.6).sqrt() as u32
    }
}

/// [`upload_slots`] for a cap in bytes/s (`None` is unlimited).
pub fn upload_slots_for_cap(cap: Option<f64>) -> u32 {
    upload_slots(cap.map_or(-1.0, |c| c / KB))
}

/// What a peer knows about one buddy when rechoking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuddyStats {
    pub buddy: PeerId,
    /// Measured download rate from this buddy, bytes/s.
    pub rate_to_me: f64,
    /// Measured upload rate to this buddy, bytes/s.
    pub rate_from_me: f64,
    pub interested_in_me: bool,
    pub i_am_interested: bool,
}

/// Picks the `take` interested buddies with the highest `key`. The sort is
/// stable, so equal rates keep the order in which buddies were given.
fn top_interested(
    buddies: &[BuddyStats],
    take: usize,
    skip: Option<PeerId>,
    key: impl Fn(&BuddyStats) -> f64,
) -> Vec<PeerId> {
    let mut cands: Vec<&BuddyStats> = buddies
        .iter()
        .filter(|b| b.interested_in_me && Some(b.buddy) != skip)
        .collect();
    cands.sort_by(|a, b| key(b).total_cmp(&key(a)));
    cands.into_iter().take(take).map(|b| b.buddy).collect()
}

/// Leecher rechoke (rate-based tit-for-tat): unchoke the interested buddies
/// that upload to us fastest, reserving one slot for `optimistic` if it is
/// an interested buddy.
pub fn rechoke_leecher(buddies: &[BuddyStats], slots: usize, optimistic: Option<PeerId>) -> BTreeSet<PeerId> {
    debug_assert!(slots >= 1);
    let optimistic =
        optimistic.filter(|o| buddies.iter().any(|b| b.buddy == *o && b.interested_in_me));
    let regular = slots.saturating_sub(optimistic.is_some() as usize);
    let mut out: BTreeSet<PeerId> = top_interested(buddies, regular, optimistic, |b| b.rate_to_me)
        .into_iter()
        .collect();
    out.extend(optimistic);
    out
}

/// Seed rechoke: unchoke the interested buddies that download from us fastest.
pub fn rechoke_seed(buddies: &[BuddyStats], slots: usize) -> BTreeSet<PeerId> {
    debug_assert!(slots >= 1);
    top_interested(buddies, slots, None, |b| b.rate_from_me)
        .into_iter()
        .collect()
}
