use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::units::KIB;

/// Upper bound on the piece count when laying out a torrent the version-5 way.
pub const MAX_PIECES_V5: u64 = 4096;
pub const V4_MIN_PIECE: u64 = 256 * KIB;
pub const V4_MAX_PIECE: u64 = 1024 * KIB;

/// How the piece size of a torrent is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PieceRule {
    /// Explicit power-of-two piece size between 256 KiB and 1 MiB.
    V4,
    /// Smallest power of two keeping the piece count at or below 4096.
    V5,
}

/// File, piece and slice geometry of the distributed file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorrentMeta {
    file_size: u64,
    piece_size: u64,
    slice_size: u64,
    piece_count: u32,
    slices_per_piece: u32,
}

impl TorrentMeta {
    /// Version-5 layout: the smallest power-of-two piece size (never below
    /// the slice size) for which the file fits in at most 4096 pieces.
    pub fn layout_v5(file_size: u64, slice_size: u64) -> Result<Self, ProtocolError> {
        check_slice(file_size, slice_size)?;
        let mut piece = slice_size;
        while file_size.div_ceil(piece) > MAX_PIECES_V5 {
            piece = piece.checked_mul(2).ok_or(ProtocolError::TooManyPieces {
                file_size,
                max: MAX_PIECES_V5,
            })?;
        }
        Ok(Self::build(file_size, piece, slice_size))
    }

    /// Version-4 layout with an explicit piece size.
    pub fn layout_v4(file_size: u64, slice_size: u64, piece_size: u64) -> Result<Self, ProtocolError> {
        check_slice(file_size, slice_size)?;
        if !piece_size.is_power_of_two() || !(V4_MIN_PIECE..=V4_MAX_PIECE).contains(&piece_size) {
            return Err(ProtocolError::BadPieceSize(piece_size));
        }
        if slice_size > piece_size {
            return Err(ProtocolError::SliceLargerThanPiece {
                slice: slice_size,
                piece: piece_size,
            });
        }
        Ok(Self::build(file_size, piece_size, slice_size))
    }

    fn build(file_size: u64, piece_size: u64, slice_size: u64) -> Self {
        TorrentMeta {
            file_size,
            piece_size,
            slice_size,
            piece_count: file_size.div_ceil(piece_size) as u32,
            slices_per_piece: piece_size.div_ceil(slice_size) as u32,
        }
    }

    pub fn file_size(&self) -> u64 {
        self.file_size
    }

    pub fn piece_size(&self) -> u64 {
        self.piece_size
    }

    pub fn slice_size(&self) -> u64 {
        self.slice_size
    }

    pub fn piece_count(&self) -> u32 {
        self.piece_count
    }

    pub fn slices_per_piece(&self) -> u32 {
        self.slices_per_piece
    }

    /// Length of `piece`; only the last piece can be short.
    pub fn piece_len(&self, piece: u32) -> u64 {
        let start = piece as u64 * self.piece_size;
        self.piece_size.min(self.file_size - start)
    }

    /// Number of slices in `piece`.
    pub fn slices_in(&self, piece: u32) -> u32 {
        self.piece_len(piece).div_ceil(self.slice_size) as u32
    }

    pub fn slice_len(&self, piece: u32, slice: u32) -> u64 {
        let len = self.piece_len(piece);
        let start = slice as u64 * self.slice_size;
        self.slice_size.min(len - start)
    }
}

fn check_slice(file_size: u64, slice_size: u64) -> Result<(), ProtocolError> {
    if file_size == 0 {
        return Err(ProtocolError::EmptyFile);
    }
    if slice_size == 0 || !slice_size.is_power_of_two() {
        return Err(ProtocolError::BadSliceSize(slice_size));
    }
    Ok(())
}
