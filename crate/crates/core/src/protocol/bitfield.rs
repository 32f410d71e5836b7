/// Set of pieces, one bit per piece.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Bitfield {
    words: Vec<u64>,
    len: u32,
    ones: u32,
}

impl Bitfield {
    pub fn new(len: u32) -> Self {
        Bitfield {
            words: vec![0; (len as usize).div_ceil(64)],
            len,
            ones: 0,
        }
    }

    pub fn full(len: u32) -> Self {
        let mut bf = Self::new(len);
        for (i, w) in bf.words.iter_mut().enumerate() {
            let rem = len as usize - i * 64;
            *w = if rem >= 64 { u64::MAX } else { (1u64 << rem) - 1 };
        }
        bf.ones = len;
        bf
    }

    pub fn from_indices(len: u32, indices: impl IntoIterator<Item = u32>) -> Self {
        let mut bf = Self::new(len);
        for i in indices {
            bf.set(i);
        }
        bf
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn count(&self) -> u32 {
        self.ones
    }

    pub fn is_complete(&self) -> bool {
        self.ones == self.len
    }

    pub fn get(&self, i: u32) -> bool {
        debug_assert!(i < self.len);
        self.words[i as usize / 64] >> (i % 64) & 1 == 1
    }

    /// Sets bit `i`, returning whether it was previously clear.
    pub fn set(&mut self, i: u32) -> bool {
        assert!(i < self.len, "piece {i} out of range {}", self.len);
        let w = &mut self.words[i as usize / 64];
        let mask = 1u64 << (i % 64);
        let was_clear = *w & mask == 0;
        if was_clear {
            *w |= mask;
            self.ones += 1;
        }
        was_clear
    }

    /// Clears bit `i`, returning whether it was previously set.
    pub fn clear(&mut self, i: u32) -> bool {
        assert!(i < self.len, "piece {i} out of range {}", self.len);
        let w = &mut self.words[i as usize / 64];
        let mask = 1u64 << (i % 64);
        let was_set = *w & mask != 0;
        if was_set {
            *w &= !mask;
            self.ones -= 1;
        }
        was_set
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut bits = w;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let tz = bits.trailing_zeros();
                bits &= bits - 1;
                Some(wi as u32 * 64 + tz)
            })
        })
    }

    /// Number of pieces set here and clear in `other`.
    pub fn count_missing_from(&self, other: &Bitfield) -> u32 {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & !b).count_ones())
            .sum()
    }
}

/// Per-piece count of buddies known to hold the piece.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityTable {
    counts: Vec<u32>,
}

impl AvailabilityTable {
    pub fn new(piece_count: u32) -> Self {
        AvailabilityTable {
            counts: vec![0; piece_count as usize],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        AvailabilityTable { counts }
    }

    pub fn len(&self) -> u32 {
        self.counts.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn get(&self, piece: u32) -> u32 {
        self.counts[piece as usize]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn increment(&mut self, piece: u32) {
        self.counts[piece as usize] += 1;
    }

    pub fn decrement(&mut self, piece: u32) {
        let c = &mut self.counts[piece as usize];
        debug_assert!(*c > 0, "availability underflow for piece {piece}");
        *c = c.saturating_sub(1);
    }

    pub fn add_bitfield(&mut self, bf: &Bitfield) {
        for p in bf.iter_ones() {
            self.increment(p);
        }
    }

    pub fn remove_bitfield(&mut self, bf: &Bitfield) {
        for p in bf.iter_ones() {
            self.decrement(p);
        }
    }
}
