use std::collections::{BTreeMap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentParams, Message, PeerConfig, RateMeter};
use crate::protocol::{
    random_select, rarest_first_select, rechoke_leecher, rechoke_seed, AvailabilityTable, Bitfield, BuddyStats,
    PieceStrategy, TorrentMeta,
};
use crate::{NodeId, PeerId};

const NO_SLOT: u32 = u32::MAX;
const BYTE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leecher,
    Seed,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leecher => "leecher",
            Role::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentEvent {
    PieceComplete(u32),
    DownloadFinished,
}

/// Messages and lifecycle events produced while handling one input.
#[derive(Debug, Default)]
pub struct Outbox {
    pub messages: Vec<(PeerId, Message)>,
    pub events: Vec<AgentEvent>,
}

impl Outbox {
    pub fn clear(&mut self) {
        self.messages.clear();
        self.events.clear();
    }
}

/// One established connection, seen from the local side.
#[derive(Debug, Clone)]
pub struct Buddy {
    pub id: PeerId,
    pub node: NodeId,
    /// Pieces the buddy is known to hold (from its bitfield and HAVEs).
    pub have: Bitfield,
    /// Pieces in `have` that we still miss.
    wanted: u32,
    pub am_choking: bool,
    pub am_interested: bool,
    pub peer_choking: bool,
    pub peer_interested: bool,
    pub down: RateMeter,
    pub up: RateMeter,
    /// Slices we requested from the buddy, not yet received.
    outstanding: Vec<(u32, u32)>,
    /// Slices the buddy requested from us, FIFO.
    serving: VecDeque<(u32, u32)>,
    head_sent: f64,
    queued: u64,
}

impl Buddy {
    fn new(id: PeerId, node: NodeId, pieces: u32, now: f64) -> Self {
        Buddy {
            id,
            node,
            have: Bitfield::new(pieces),
            wanted: 0,
            am_choking: true,
            am_interested: false,
            peer_choking: true,
            peer_interested: false,
            down: RateMeter::new(now),
            up: RateMeter::new(now),
            outstanding: Vec::new(),
            serving: VecDeque::new(),
            head_sent: 0.0,
            queued: 0,
        }
    }

    pub fn outstanding(&self) -> &[(u32, u32)] {
        &self.outstanding
    }

    /// Bytes requested by the buddy and not yet sent.
    pub fn pending_upload(&self) -> f64 {
        (self.queued as f64 - self.head_sent).max(0.0)
    }

    /// We unchoked it and it wants data: an active upload connection.
    pub fn is_upload_connection(&self) -> bool {
        !self.am_choking && self.peer_interested
    }

    fn clear_serving(&mut self) {
        self.serving.clear();
        self.head_sent = 0.0;
        self.queued = 0;
    }
}

#[derive(Debug, Clone)]
struct Partial {
    /// 0 free, 1 requested, 2 received.
    state: Vec<u8>,
    received: u32,
}

const FREE: u8 = 0;
const REQUESTED: u8 = 1;
const RECEIVED: u8 = 2;

#[derive(Debug, Clone)]
pub struct PeerAgent {
    cfg: PeerConfig,
    params: AgentParams,
    meta: TorrentMeta,
    slots: usize,
    bitfield: Bitfield,
    /// Pieces complete or with a partial download in progress.
    started: Bitfield,
    avail: AvailabilityTable,
    partials: BTreeMap<u32, Partial>,
    buddies: Vec<Buddy>,
    slot_of: Vec<u32>,
    role: Role,
    bytes_up: u64,
    bytes_down: u64,
    rng: ChaCha8Rng,
    next_rechoke: f64,
    /// Role changed: rerun the full choke decision at the next tick.
    rechoke_pending: bool,
    /// Interest or membership changed: revisit slot assignment.
    slots_dirty: bool,
    optimistic: Option<PeerId>,
    rr_cursor: usize,
    next_announce: f64,
    finished_at: Option<f64>,
}

impl PeerAgent {
    /// `peer_count` bounds the peer ids this agent may meet.
    pub fn new(cfg: PeerConfig, params: AgentParams, meta: TorrentMeta, peer_count: usize, seed: u64, complete: bool) -> Self {
        let pieces = meta.piece_count();
        let bitfield = if complete { Bitfield::full(pieces) } else { Bitfield::new(pieces) };
        PeerAgent {
            slots: cfg.effective_slots() as usize,
            next_rechoke: cfg.join_time,
            next_announce: cfg.join_time,
            role: if complete { Role::Seed } else { Role::Leecher },
            started: bitfield.clone(),
            bitfield,
            avail: AvailabilityTable::new(pieces),
            partials: BTreeMap::new(),
            buddies: Vec::new(),
            slot_of: vec![NO_SLOT; peer_count],
            bytes_up: 0,
            bytes_down: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            rechoke_pending: false,
            slots_dirty: false,
            optimistic: None,
            rr_cursor: 0,
            finished_at: None,
            cfg,
            params,
            meta,
        }
    }

    pub fn id(&self) -> PeerId {
        self.cfg.id
    }

    pub fn node(&self) -> NodeId {
        self.cfg.node
    }

    pub fn config(&self) -> &PeerConfig {
        &self.cfg
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn bitfield(&self) -> &Bitfield {
        &self.bitfield
    }

    pub fn availability(&self) -> &AvailabilityTable {
        &self.avail
    }

    pub fn buddies(&self) -> &[Buddy] {
        &self.buddies
    }

    pub fn buddy(&self, id: PeerId) -> Option<&Buddy> {
        self.index_of(id).map(|i| &self.buddies[i])
    }

    pub fn buddy_count(&self) -> usize {
        self.buddies.len()
    }

    pub fn bytes_up(&self) -> u64 {
        self.bytes_up
    }

    pub fn bytes_down(&self) -> u64 {
        self.bytes_down
    }

    pub fn finished_at(&self) -> Option<f64> {
        self.finished_at
    }

    pub fn is_buddy(&self, id: PeerId) -> bool {
        self.index_of(id).is_some()
    }

    fn index_of(&self, id: PeerId) -> Option<usize> {
        match self.slot_of.get(id.index()) {
            Some(&s) if s != NO_SLOT => Some(s as usize),
            _ => None,
        }
    }

    // ---- connection management -------------------------------------------

    /// Incoming connections are dropped once the buddy table is full.
    pub fn accepts_incoming(&self) -> bool {
        self.buddies.len() < self.params.max_buddies
    }

    /// Whether the peer still initiates outbound connections.
    pub fn wants_outbound(&self) -> bool {
        self.buddies.len() < self.params.target_buddies
    }

    /// True when the buddy count fell below the refill threshold and the
    /// announce interval has elapsed.
    pub fn wants_announce(&self, now: f64) -> bool {
        self.buddies.len() < self.params.refill_threshold && now >= self.next_announce
    }

    pub fn note_announce(&mut self, now: f64) {
        self.next_announce = now + self.params.announce_interval;
    }

    /// Unknown peers from a tracker list to dial, until the target is reached.
    pub fn connect_targets(&self, list: &[PeerId]) -> Vec<PeerId> {
        let room = self.params.target_buddies.saturating_sub(self.buddies.len());
        list.iter()
            .copied()
            .filter(|p| *p != self.cfg.id && !self.is_buddy(*p))
            .take(room)
            .collect()
    }

    pub fn add_buddy(&mut self, id: PeerId, node: NodeId, now: f64, out: &mut Outbox) {
        debug_assert!(!self.is_buddy(id) && id != self.cfg.id);
        self.slot_of[id.index()] = self.buddies.len() as u32;
        self.buddies.push(Buddy::new(id, node, self.meta.piece_count(), now));
        if self.bitfield.count() > 0 {
            out.messages.push((id, Message::Bitfield(self.bitfield.clone())));
        }
    }

    pub fn remove_buddy(&mut self, id: PeerId) {
        let Some(idx) = self.index_of(id) else {
            return;
        };
        self.cancel_outstanding(idx);
        let b = self.buddies.remove(idx);
        self.avail.remove_bitfield(&b.have);
        self.slot_of[id.index()] = NO_SLOT;
        for (i, other) in self.buddies.iter().enumerate().skip(idx) {
            self.slot_of[other.id.index()] = i as u32;
        }
        if self.rr_cursor > idx {
            self.rr_cursor -= 1;
        }
        if self.optimistic == Some(id) {
            self.optimistic = None;
        }
        if b.is_upload_connection() {
            self.slots_dirty = true;
        }
    }

    // ---- message handling ------------------------------------------------

    /// Handles one control message. Messages from unknown peers are dropped.
    pub fn receive(&mut self, from: PeerId, msg: Message, _now: f64, out: &mut Outbox) {
        let Some(idx) = self.index_of(from) else {
            log::debug!("peer {} dropped {:?} from non-buddy {}", self.cfg.id, msg, from);
            return;
        };
        match msg {
            Message::Bitfield(bf) => {
                if bf.len() != self.meta.piece_count() {
                    log::debug!("peer {} dropped malformed bitfield from {}", self.cfg.id, from);
                    return;
                }
                let b = &mut self.buddies[idx];
                self.avail.remove_bitfield(&b.have);
                b.have = bf;
                self.avail.add_bitfield(&b.have);
                b.wanted = b.have.count_missing_from(&self.bitfield);
                self.update_interest(idx, out);
                self.fill_requests(idx, out);
            }
            Message::Have(p) => {
                if p >= self.meta.piece_count() {
                    return;
                }
                let b = &mut self.buddies[idx];
                if b.have.set(p) {
                    self.avail.increment(p);
                    if !self.bitfield.get(p) {
                        b.wanted += 1;
                        self.update_interest(idx, out);
                        self.fill_requests(idx, out);
                    }
                }
            }
            Message::Interested => {
                let b = &mut self.buddies[idx];
                b.peer_interested = true;
                if b.am_choking {
                    self.slots_dirty = true;
                }
            }
            Message::NotInterested => {
                let b = &mut self.buddies[idx];
                b.peer_interested = false;
                b.clear_serving();
                if !b.am_choking {
                    self.slots_dirty = true;
                }
            }
            Message::Choke => {
                self.buddies[idx].peer_choking = true;
                self.cancel_outstanding(idx);
            }
            Message::Unchoke => {
                self.buddies[idx].peer_choking = false;
                self.fill_requests(idx, out);
            }
            Message::Request { piece, slice } => {
                if piece >= self.meta.piece_count() || slice >= self.meta.slices_in(piece) {
                    return;
                }
                let b = &mut self.buddies[idx];
                if b.am_choking || !self.bitfield.get(piece) || b.serving.contains(&(piece, slice)) {
                    return;
                }
                b.serving.push_back((piece, slice));
                b.queued += self.meta.slice_len(piece, slice);
            }
        }
    }

    fn update_interest(&mut self, idx: usize, out: &mut Outbox) {
        let b = &mut self.buddies[idx];
        let want = b.wanted > 0;
        if want != b.am_interested {
            b.am_interested = want;
            let msg = if want { Message::Interested } else { Message::NotInterested };
            out.messages.push((b.id, msg));
        }
    }

    fn cancel_outstanding(&mut self, idx: usize) {
        for (p, s) in self.buddies[idx].outstanding.drain(..) {
            if let Some(part) = self.partials.get_mut(&p) {
                if part.state[s as usize] == REQUESTED {
                    part.state[s as usize] = FREE;
                }
            }
        }
    }

    // ---- downloading -----------------------------------------------------

    /// Next slice to ask `idx` for: unfinished pieces first, then a fresh
    /// piece chosen by the configured strategy. A fresh piece is only
    /// started when `room` pipeline entries can hold all of its slices.
    fn next_slice(&mut self, idx: usize, room: usize) -> Option<(u32, u32)> {
        let b = &self.buddies[idx];
        for (&p, part) in &self.partials {
            if b.have.get(p) {
                if let Some(s) = part.state.iter().position(|&x| x == FREE) {
                    return Some((p, s as u32));
                }
            }
        }
        if room < (self.meta.slices_per_piece() as usize).min(self.params.pipeline_depth).div_ceil(2) {
            return None;
        }
        let pick = match self.cfg.strategy {
            PieceStrategy::Rarest => {
                rarest_first_select(&self.bitfield, &self.avail, &b.have, &self.started, &mut self.rng)
            }
            PieceStrategy::Random => random_select(&self.bitfield, &b.have, &self.started, &mut self.rng),
        }?;
        self.started.set(pick);
        self.partials.insert(
            pick,
            Partial {
                state: vec![FREE; self.meta.slices_in(pick) as usize],
                received: 0,
            },
        );
        Some((pick, 0))
    }

    fn fill_requests(&mut self, idx: usize, out: &mut Outbox) {
        if self.role == Role::Seed {
            return;
        }
        loop {
            let b = &self.buddies[idx];
            if b.peer_choking || !b.am_interested || b.outstanding.len() >= self.params.pipeline_depth {
                return;
            }
            let room = self.params.pipeline_depth - b.outstanding.len();
            let Some((p, s)) = self.next_slice(idx, room) else {
                return;
            };
            self.partials.get_mut(&p).expect("partial exists").state[s as usize] = REQUESTED;
            let b = &mut self.buddies[idx];
            b.outstanding.push((p, s));
            out.messages.push((b.id, Message::Request { piece: p, slice: s }));
        }
    }

    /// Counts bytes of an in-progress transfer from `from` toward the rate
    /// measurement.
    pub fn record_download(&mut self, from: PeerId, bytes: f64, now: f64) {
        if let Some(idx) = self.index_of(from) {
            self.buddies[idx].down.add(now, bytes);
        }
    }

    /// A slice from `from` finished arriving. Returns false for slices we
    /// no longer expect (cancelled by a choke in the meantime).
    pub fn receive_slice(&mut self, from: PeerId, piece: u32, slice: u32, now: f64, out: &mut Outbox) -> bool {
        let Some(idx) = self.index_of(from) else {
            return false;
        };
        let b = &mut self.buddies[idx];
        let Some(pos) = b.outstanding.iter().position(|&x| x == (piece, slice)) else {
            return false;
        };
        b.outstanding.swap_remove(pos);
        let part = self.partials.get_mut(&piece).expect("requested slice has a partial");
        debug_assert_eq!(part.state[slice as usize], REQUESTED);
        part.state[slice as usize] = RECEIVED;
        part.received += 1;
        self.bytes_down += self.meta.slice_len(piece, slice);
        if part.received as usize == part.state.len() {
            self.complete_piece(piece, now, out);
        }
        self.fill_requests(idx, out);
        true
    }

    fn complete_piece(&mut self, piece: u32, now: f64, out: &mut Outbox) {
        self.partials.remove(&piece);
        self.bitfield.set(piece);
        for i in 0..self.buddies.len() {
            let b = &mut self.buddies[i];
            out.messages.push((b.id, Message::Have(piece)));
            if b.have.get(piece) {
                b.wanted -= 1;
                self.update_interest(i, out);
            }
        }
        out.events.push(AgentEvent::PieceComplete(piece));
        if self.bitfield.is_complete() {
            debug_assert_eq!(self.bytes_down, self.meta.file_size());
            self.role = Role::Seed;
            self.finished_at = Some(now);
            self.rechoke_pending = true;
            out.events.push(AgentEvent::DownloadFinished);
        }
    }

    // ---- uploading -------------------------------------------------------

    /// Active upload queues: (buddy, node, pending bytes) for every unchoked
    /// buddy with requests waiting.
    pub fn upload_queues(&self) -> impl Iterator<Item = (PeerId, NodeId, f64)> + '_ {
        self.buddies
            .iter()
            .filter(|b| !b.am_choking && b.queued > 0)
            .map(|b| (b.id, b.node, b.pending_upload()))
    }

    /// Pushes `bytes` down the queue to `to`; returns the slices finished.
    pub fn send_bytes(&mut self, to: PeerId, mut bytes: f64, now: f64) -> Vec<(u32, u32)> {
        let Some(idx) = self.index_of(to) else {
            return Vec::new();
        };
        let meta = self.meta;
        let b = &mut self.buddies[idx];
        b.up.add(now, bytes);
        let mut done = Vec::new();
        while let Some(&(p, s)) = b.serving.front() {
            let len = meta.slice_len(p, s) as f64;
            let need = len - b.head_sent;
            if bytes + BYTE_EPS >= need {
                bytes -= need;
                b.serving.pop_front();
                b.head_sent = 0.0;
                b.queued -= len as u64;
                done.push((p, s));
            } else {
                b.head_sent += bytes;
                break;
            }
        }
        done
    }

    /// Credits an upload accepted by the receiver.
    pub fn credit_upload(&mut self, bytes: u64) {
        self.bytes_up += bytes;
    }

    // ---- timers ----------------------------------------------------------

    /// Runs timers: the periodic rechoke (which also rotates the optimistic
    /// slot), slot adjustments after interest changes, and request top-ups.
    pub fn tick(&mut self, now: f64, out: &mut Outbox) {
        if now + 1e-9 >= self.next_rechoke {
            self.next_rechoke += self.params.rechoke_period;
            self.rechoke(now, true, out);
        } else if self.rechoke_pending {
            self.rechoke(now, false, out);
        } else if self.slots_dirty {
            self.adjust_slots(now, out);
        }
        self.rechoke_pending = false;
        self.slots_dirty = false;
        if self.role == Role::Leecher {
            for idx in 0..self.buddies.len() {
                self.fill_requests(idx, out);
            }
        }
    }

    /// Choking score of a buddy: what it gives us while leeching, what we
    /// give it while seeding.
    fn choke_score(&self, b: &Buddy, now: f64) -> f64 {
        match self.role {
            Role::Leecher => b.down.rate(now),
            Role::Seed => b.up.rate(now),
        }
    }

    /// Between rounds: free slots go to the best interested choked buddies,
    /// and a leecher lets such a buddy replace its slowest regular upload
    /// connection when the buddy now sends faster. Nobody is choked for
    /// losing interest; that waits for the next round.
    fn adjust_slots(&mut self, now: f64, out: &mut Outbox) {
        loop {
            let mut best: Option<(usize, f64)> = None;
            for (i, b) in self.buddies.iter().enumerate() {
                if b.am_choking && b.peer_interested {
                    let s = self.choke_score(b, now);
                    if best.is_none_or(|(_, bs)| s > bs) {
                        best = Some((i, s));
                    }
                }
            }
            let Some((cand, score)) = best else {
                return;
            };
            if self.upload_connection_count() >= self.slots {
                if self.role == Role::Seed {
                    return;
                }
                let mut worst: Option<(usize, f64)> = None;
                for (i, b) in self.buddies.iter().enumerate() {
                    if b.is_upload_connection() && Some(b.id) != self.optimistic {
                        let s = self.choke_score(b, now);
                        if worst.is_none_or(|(_, ws)| s < ws) {
                            worst = Some((i, s));
                        }
                    }
                }
                match worst {
                    Some((w, ws)) if score > ws => {
                        let b = &mut self.buddies[w];
                        b.am_choking = true;
                        b.clear_serving();
                        out.messages.push((b.id, Message::Choke));
                    }
                    _ => return,
                }
            }
            let b = &mut self.buddies[cand];
            b.am_choking = false;
            out.messages.push((b.id, Message::Unchoke));
        }
    }

    fn rechoke(&mut self, now: f64, rotate: bool, out: &mut Outbox) {
        let n = self.buddies.len();
        if n == 0 {
            return;
        }
        let cursor = self.rr_cursor % n;
        let order: Vec<usize> = (0..n).map(|k| (cursor + k) % n).collect();
        if rotate {
            let next = order
                .iter()
                .copied()
                .find(|&i| self.buddies[i].peer_interested && self.buddies[i].am_choking)
                .or_else(|| order.iter().copied().find(|&i| self.buddies[i].peer_interested));
            if let Some(i) = next {
                self.rr_cursor = (i + 1) % n;
                self.optimistic = Some(self.buddies[i].id);
            } else {
                self.optimistic = None;
            }
        } else if let Some(o) = self.optimistic {
            if !self.buddy(o).is_some_and(|b| b.peer_interested) {
                self.optimistic = None;
            }
        }
        let stats: Vec<BuddyStats> = order
            .iter()
            .map(|&i| {
                let b = &self.buddies[i];
                BuddyStats {
                    buddy: b.id,
                    rate_to_me: b.down.rate(now),
                    rate_from_me: b.up.rate(now),
                    interested_in_me: b.peer_interested,
                    i_am_interested: b.am_interested,
                }
            })
            .collect();
        let chosen = match self.role {
            Role::Leecher => {
                let opt = if self.params.optimistic_unchoke { self.optimistic } else { None };
                rechoke_leecher(&stats, self.slots, opt)
            }
            Role::Seed => rechoke_seed(&stats, self.slots),
        };
        for b in &mut self.buddies {
            let unchoke = chosen.contains(&b.id);
            if unchoke && b.am_choking {
                b.am_choking = false;
                out.messages.push((b.id, Message::Unchoke));
            } else if !unchoke && !b.am_choking {
                b.am_choking = true;
                b.clear_serving();
                out.messages.push((b.id, Message::Choke));
            }
        }
    }

    pub fn upload_connection_count(&self) -> usize {
        self.buddies.iter().filter(|b| b.is_upload_connection()).count()
    }
}
