//! Out-of-band metadata stored with every programmed page.
//!
//! Layout, little-endian, at the start of the spare area:
//!
//! | offset | len | field                                   |
//! |--------|-----|-----------------------------------------|
//! | 0      | 1   | block type (`0xD7` data, `0xC4` checkpoint) |
//! | 1      | 4   | lpn (chain position for checkpoint pages) |
//! | 5      | 8   | sequence number                         |
//! | 13     | 4   | CRC-32 over bytes 0..13 and the page data |
//!
//! The rest of the spare area is left erased (`0xFF`).

use crate::sim_flash::Lpn;

pub const SPARE_LEN: usize = 17;

/// Lpn field value for pages that carry no logical page.
pub const LPN_NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockType {
    Data,
    Checkpoint,
}

impl BlockType {
    fn to_byte(self) -> u8 {
        match self {
            BlockType::Data => 0xD7,
            BlockType::Checkpoint => 0xC4,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0xD7 => Some(BlockType::Data),
            0xC4 => Some(BlockType::Checkpoint),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpareMetadata {
    pub block_type: BlockType,
    pub lpn: u32,
    pub seq: u64,
    pub crc: u32,
}

impl SpareMetadata {
    /// Builds the metadata for `data`, computing its checksum.
    pub fn new(block_type: BlockType, lpn: u32, seq: u64, data: &[u8]) -> Self {
        let mut m = SpareMetadata { block_type, lpn, seq, crc: 0 };
        m.crc = m.checksum(data);
        m
    }

    pub fn data(lpn: Lpn, seq: u64, data: &[u8]) -> Self {
        Self::new(BlockType::Data, lpn.0, seq, data)
    }

    fn checksum(&self, data: &[u8]) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.header_bytes());
        h.update(data);
        h.finalize()
    }

    fn header_bytes(&self) -> [u8; 13] {
        let mut b = [0u8; 13];
        b[0] = self.block_type.to_byte();
        b[1..5].copy_from_slice(&self.lpn.to_le_bytes());
        b[5..13].copy_from_slice(&self.seq.to_le_bytes());
        b
    }

    pub fn encode(&self) -> [u8; SPARE_LEN] {
        let mut out = [0u8; SPARE_LEN];
        out[..13].copy_from_slice(&self.header_bytes());
        out[13..17].copy_from_slice(&self.crc.to_le_bytes());
        out
    }

    /// Parses a spare area. Returns `None` for erased or unrecognised spares.
    pub fn decode(spare: &[u8]) -> Option<Self> {
        if spare.len() < SPARE_LEN {
            return None;
        }
        let block_type = BlockType::from_byte(spare[0])?;
        Some(SpareMetadata {
            block_type,
            lpn: u32::from_le_bytes(spare[1..5].try_into().unwrap()),
            seq: u64::from_le_bytes(spare[5..13].try_into().unwrap()),
            crc: u32::from_le_bytes(spare[13..17].try_into().unwrap()),
        })
    }

    /// True when `data` is the page this metadata was written with.
    pub fn verify(&self, data: &[u8]) -> bool {
        self.checksum(data) == self.crc
    }

    pub fn lpn(&self) -> Option<Lpn> {
        (self.lpn != LPN_NONE).then_some(Lpn(self.lpn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let m = SpareMetadata { block_type: BlockType::Data, lpn: 0x0102_0304, seq: 9, crc: 0xAABB_CCDD };
        let b = m.encode();
        assert_eq!(b[0], 0xD7);
        assert_eq!(&b[1..5], &[4, 3, 2, 1]);
        assert_eq!(&b[5..13], &[9, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[13..17], &[0xDD, 0xCC, 0xBB, 0xAA]);
        assert_eq!(SpareMetadata::decode(&b), Some(m));
    }

    #[test]
    fn erased_spare_decodes_to_none() {
        assert_eq!(SpareMetadata::decode(&[0xFF; 64]), None);
    }

    #[test]
    fn checksum_detects_torn_data() {
        let data = vec![7u8; 4096];
        let m = SpareMetadata::data(Lpn(3), 1, &data);
        assert!(m.verify(&data));
        let mut torn = data.clone();
        torn[4000] = 0xFF;
        assert!(!m.verify(&torn));
    }
}
