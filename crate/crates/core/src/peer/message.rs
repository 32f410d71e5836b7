use crate::protocol::Bitfield;

/// Control messages exchanged between agents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Bitfield(Bitfield),
    Have(u32),
    Interested,
    NotInterested,
    Choke,
    Unchoke,
    Request { piece: u32, slice: u32 },
}

impl Message {
    /// Size on the wire including the 4-byte length prefix.
    pub fn wire_size(&self) -> u64 {
        match self {
            Message::Bitfield(bf) => 5 + (bf.len() as u64).div_ceil(8),
            Message::Have(_) => 9,
            Message::Request { .. } => 17,
            Message::Interested | Message::NotInterested | Message::Choke | Message::Unchoke => 5,
        }
    }
}
