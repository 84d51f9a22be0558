//! Versioned byte form of the FTL tables.
//!
//! Little-endian throughout. A header `b"PFTLSNAP"`, `u32` version and `u32`
//! section count is followed by sections of `[tag:4][len:u32][payload][crc:u32]`
//! where the CRC-32 covers tag, length and payload. Sections: `GEOM`, `MAPT`
//! (map table), `FREE` (free-block bitmap), `BLKI` (block info), `BANK`
//! (bank info) and `SEQN` (sequence counter).

use super::blocks::BlockTablesData;

const MAGIC: &[u8; 8] = b"PFTLSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Plain copy of every persistent FTL table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FtlTables {
    pub banks: u32,
    pub blocks_per_bank: u32,
    pub pages_per_block: u32,
    /// Raw map entries; `UNMAPPED` for never-flushed pages.
    pub map: Vec<u32>,
    pub blocks: BlockTablesData,
    /// Last sequence number handed out.
    pub seq: u64,
}

struct Writer {
    out: Vec<u8>,
    sections: u32,
}

impl Writer {
    fn section(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        let start = self.out.len();
        self.out.extend_from_slice(tag);
        self.out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        self.out.extend_from_slice(&payload);
        let crc = crc32fast::hash(&self.out[start..]);
        self.out.extend_from_slice(&crc.to_le_bytes());
        self.sections += 1;
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err("truncated snapshot".into());
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn put32(v: &mut Vec<u8>, x: u32) {
    v.extend_from_slice(&x.to_le_bytes());
}

fn put64(v: &mut Vec<u8>, x: u64) {
    v.extend_from_slice(&x.to_le_bytes());
}

impl FtlTables {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer { out: Vec::new(), sections: 0 };
        w.out.extend_from_slice(MAGIC);
        put32(&mut w.out, SNAPSHOT_VERSION);
        put32(&mut w.out, 0); // section count, patched below

        let mut p = Vec::new();
        for x in [self.banks, self.blocks_per_bank, self.pages_per_block, self.map.len() as u32] {
            put32(&mut p, x);
        }
        w.section(b"GEOM", p);

        let mut p = Vec::with_capacity(self.map.len() * 4);
        for &e in &self.map {
            put32(&mut p, e);
        }
        w.section(b"MAPT", p);

        let mut p = Vec::new();
        for words in &self.blocks.free {
            put32(&mut p, words.len() as u32);
            for &x in words {
                put64(&mut p, x);
            }
        }
        w.section(b"FREE", p);

        let mut p = Vec::new();
        for (words, &count) in self.blocks.valid_bits.iter().zip(&self.blocks.valid_counts) {
            put32(&mut p, count);
            put32(&mut p, words.len() as u32);
            for &x in words {
                put64(&mut p, x);
            }
        }
        w.section(b"BLKI", p);

        let mut p = Vec::new();
        for (&(free, valid), &(cur, next)) in self.blocks.bank_counts.iter().zip(&self.blocks.current) {
            put32(&mut p, free);
            put64(&mut p, valid);
            put32(&mut p, cur.unwrap_or(u32::MAX));
            put32(&mut p, next);
        }
        w.section(b"BANK", p);

        let mut p = Vec::new();
        put64(&mut p, self.seq);
        w.section(b"SEQN", p);

        let n = w.sections;
        w.out[12..16].copy_from_slice(&n.to_le_bytes());
        w.out
    }

    pub fn decode(bytes: &[u8]) -> Result<FtlTables, String> {
        let mut c = Cursor { buf: bytes, pos: 0 };
        if c.take(8)? != MAGIC {
            return Err("bad snapshot magic".into());
        }
        let version = c.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(format!("unsupported snapshot version {version}"));
        }
        let count = c.u32()?;
        let mut sections = std::collections::HashMap::new();
        for _ in 0..count {
            let start = c.pos;
            let tag: [u8; 4] = c.take(4)?.try_into().unwrap();
            let len = c.u32()? as usize;
            let payload = c.take(len)?;
            let crc = crc32fast::hash(&bytes[start..c.pos]);
            if c.u32()? != crc {
                return Err(format!("checksum mismatch in section {}", String::from_utf8_lossy(&tag)));
            }
            sections.insert(tag, payload);
        }
        let get = |tag: &[u8; 4]| {
            sections
                .get(tag)
                .map(|p| Cursor { buf: p, pos: 0 })
                .ok_or_else(|| format!("missing section {}", String::from_utf8_lossy(tag)))
        };

        let mut g = get(b"GEOM")?;
        let (banks, bpb, ppb, lpns) = (g.u32()?, g.u32()?, g.u32()?, g.u32()?);
        let blocks = banks as usize * bpb as usize;

        let mut m = get(b"MAPT")?;
        let map = (0..lpns).map(|_| m.u32()).collect::<Result<Vec<_>, _>>()?;

        let mut f = get(b"FREE")?;
        let mut free = Vec::with_capacity(banks as usize);
        for _ in 0..banks {
            let n = f.u32()?;
            free.push((0..n).map(|_| f.u64()).collect::<Result<Vec<_>, _>>()?);
        }

        let mut b = get(b"BLKI")?;
        let mut valid_bits = Vec::with_capacity(blocks);
        let mut valid_counts = Vec::with_capacity(blocks);
        for _ in 0..blocks {
            valid_counts.push(b.u32()?);
            let n = b.u32()?;
            valid_bits.push((0..n).map(|_| b.u64()).collect::<Result<Vec<_>, _>>()?);
        }

        let mut k = get(b"BANK")?;
        let mut bank_counts = Vec::new();
        let mut current = Vec::new();
        for _ in 0..banks {
            let free = k.u32()?;
            let valid = k.u64()?;
            let cur = k.u32()?;
            let next = k.u32()?;
            bank_counts.push((free, valid));
            current.push(((cur != u32::MAX).then_some(cur), next));
        }

        let mut s = get(b"SEQN")?;
        let seq = s.u64()?;

        if !(m.done() && f.done() && b.done() && k.done() && s.done() && g.done()) {
            return Err("trailing bytes in snapshot section".into());
        }
        Ok(FtlTables {
            banks,
            blocks_per_bank: bpb,
            pages_per_block: ppb,
            map,
            blocks: BlockTablesData { free, current, bank_counts, valid_bits, valid_counts },
            seq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FtlTables {
        FtlTables {
            banks: 2,
            blocks_per_bank: 2,
            pages_per_block: 4,
            map: vec![0, 0x7FFF_FFFF, 9, 3],
            blocks: BlockTablesData {
                free: vec![vec![0b10], vec![0b11]],
                current: vec![(Some(0), 2), (None, 0)],
                bank_counts: vec![(1, 2), (2, 0)],
                valid_bits: vec![vec![0b11], vec![0], vec![0], vec![0]],
                valid_counts: vec![2, 0, 0, 0],
            },
            seq: 77,
        }
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(FtlTables::decode(&t.encode()).unwrap(), t);
    }

    #[test]
    fn detects_corruption() {
        let mut bytes = sample().encode();
        let n = bytes.len();
        bytes[n - 6] ^= 1;
        assert!(FtlTables::decode(&bytes).unwrap_err().contains("checksum"));
        assert!(FtlTables::decode(&bytes[..20]).is_err());
        assert!(FtlTables::decode(b"nonsense").is_err());
    }
}
