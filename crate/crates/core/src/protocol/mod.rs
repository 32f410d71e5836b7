//! Pure BitTorrent algorithms and value types: piece geometry, bitfields,
//! upload-slot sizing, piece selection and the choking rules.
//!
//! Everything here is side-effect free; randomness comes in through an
//! explicit `Rng` so that the same seed always yields the same decision.

mod bitfield;
mod choke;
mod geometry;
mod select;

pub use bitfield::{AvailabilityTable, Bitfield};
pub use choke::{rechoke_leecher, rechoke_seed, upload_slots, upload_slots_for_cap, BuddyStats};
pub use geometry::{PieceRule, TorrentMeta, MAX_PIECES_V5, V4_MAX_PIECE, V4_MIN_PIECE};
pub use select::{random_select, rarest_first_select, PieceStrategy};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("file size must be positive")]
    EmptyFile,
    #[error("slice size {0} is not a positive power of two")]
    BadSliceSize(u64),
    #[error("piece size {0} is not a power of two in [256 KiB, 1 MiB]")]
    BadPieceSize(u64),
    #[error("slice size {slice} exceeds piece size {piece}")]
    SliceLargerThanPiece { slice: u64, piece: u64 },
    #[error("file of {file_size} bytes needs more than {max} pieces")]
    TooManyPieces { file_size: u64, max: u64 },
}
