//! Single-file persistence of a card: profile, page and spare arrays, counters.
//!
//! Layout, little-endian: `b"PFTLIMG\0"`, `u32` version, `u32` profile length,
//! the TOML device profile, then per bank and block `u32` erase count, `u8`
//! bad flag, `u32` written pages, and for each written page its data and
//! spare bytes. A trailing `u64` block of counters ends the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::Ordering;

use serde::{Deserialize, Serialize};

use super::{FlashGeometry, LatencyModel, PageCell, SimFlashDevice};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PFTLIMG\0";
const VERSION: u32 = 1;

/// Device profile: geometry, latency model and factory bad-block table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub geometry: FlashGeometry,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default)]
    pub bad_blocks: Vec<(u32, u32)>,
}

impl DeviceProfile {
    pub fn new(geometry: FlashGeometry) -> Self {
        DeviceProfile { geometry, latency: LatencyModel::default(), bad_blocks: Vec::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn create_device(&self) -> Result<SimFlashDevice> {
        Ok(SimFlashDevice::new(self.geometry.clone(), self.latency.clone(), &self.bad_blocks)?)
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Image(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Image(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

impl SimFlashDevice {
    pub fn profile(&self) -> DeviceProfile {
        DeviceProfile {
            geometry: self.geometry.clone(),
            latency: self.model.clone(),
            bad_blocks: self.bad_blocks(),
        }
    }

    pub fn save_image(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        put_u32(&mut w, VERSION)?;
        let profile = self.profile().to_toml();
        put_u32(&mut w, profile.len() as u32)?;
        w.write_all(profile.as_bytes())?;
        for bank in &self.banks {
            let sim = bank.lock();
            for blk in &sim.blocks {
                put_u32(&mut w, blk.erase_count)?;
                w.write_all(&[blk.bad as u8])?;
                put_u32(&mut w, blk.pages.len() as u32)?;
                for cell in &blk.pages {
                    w.write_all(&cell.data)?;
                    w.write_all(&cell.spare)?;
                }
            }
        }
        let c = &self.counters;
        for v in [
            c.pages_written.load(Ordering::Relaxed),
            c.page_reads.load(Ordering::Relaxed),
            c.read_units.load(Ordering::Relaxed),
            c.erases.load(Ordering::Relaxed),
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for e in &self.per_bank_erases {
            w.write_all(&e.load(Ordering::Relaxed).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_image(path: &Path) -> Result<SimFlashDevice> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| Error::Image(e.to_string()))?;
        if &magic != MAGIC {
            return Err(Error::Image("bad magic".into()));
        }
        let version = get_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Image(format!("unsupported image version {version}")));
        }
        let plen = get_u32(&mut r)? as usize;
        let mut ptext = vec![0u8; plen];
        r.read_exact(&mut ptext).map_err(|e| Error::Image(e.to_string()))?;
        let profile = DeviceProfile::from_toml(
            std::str::from_utf8(&ptext).map_err(|e| Error::Image(e.to_string()))?,
        )?;
        let dev = profile.create_device()?;
        let g = &profile.geometry;
        let mut worn = Vec::new();
        for (b, bank) in dev.banks.iter().enumerate() {
            let mut sim = bank.lock();
            for (k, blk) in sim.blocks.iter_mut().enumerate() {
                blk.erase_count = get_u32(&mut r)?;
                let mut bad = [0u8; 1];
                r.read_exact(&mut bad).map_err(|e| Error::Image(e.to_string()))?;
                blk.bad = bad[0] != 0;
                if blk.erase_count > g.erase_cycles_limit {
                    worn.push((b as u32, k as u32));
                }
                let n = get_u32(&mut r)?;
                if n > g.pages_per_block {
                    return Err(Error::Image("written page count exceeds block size".into()));
                }
                for _ in 0..n {
                    let mut data = vec![0u8; g.page_size as usize].into_boxed_slice();
                    let mut spare = vec![0u8; g.spare_per_page as usize].into_boxed_slice();
                    r.read_exact(&mut data).map_err(|e| Error::Image(e.to_string()))?;
                    r.read_exact(&mut spare).map_err(|e| Error::Image(e.to_string()))?;
                    let parity = crc32fast::hash(&data);
                    blk.pages.push(PageCell { data, spare, parity });
                }
            }
        }
        dev.worn.lock().extend(worn);
        let c = &dev.counters;
        c.pages_written.store(get_u64(&mut r)?, Ordering::Relaxed);
        c.page_reads.store(get_u64(&mut r)?, Ordering::Relaxed);
        c.read_units.store(get_u64(&mut r)?, Ordering::Relaxed);
        c.erases.store(get_u64(&mut r)?, Ordering::Relaxed);
        for e in &dev.per_bank_erases {
            e.store(get_u64(&mut r)?, Ordering::Relaxed);
        }
        Ok(dev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_flash::PageAddress;
    use crate::time::SimTime;

    #[test]
    fn profile_toml_round_trip() {
        let mut p = DeviceProfile::new(FlashGeometry::desk_8bank());
        p.bad_blocks = vec![(1, 5)];
        let text = p.to_toml();
        assert_eq!(DeviceProfile::from_toml(&text).unwrap(), p);
        let minimal = "[geometry]\nnum_interfaces = 1\nbanks_per_interface = 2\nblocks_per_bank = 8\n\
                       pages_per_block = 8\npage_size = 4096\nspare_per_page = 64\nread_unit = 512\n\
                       erase_cycles_limit = 100000\n";
        let p = DeviceProfile::from_toml(minimal).unwrap();
        assert_eq!(p.latency, LatencyModel::default());
        assert!(p.bad_blocks.is_empty());
    }

    #[test]
    fn image_round_trip() {
        let d = SimFlashDevice::new(FlashGeometry::tiny(), LatencyModel::default(), &[(0, 7)]).unwrap();
        let page: Vec<u8> = (0..4096).map(|i| (i % 251) as u8).collect();
        d.write_page(PageAddress::new(1, 3, 0), &page, &[1, 2, 3], SimTime::ZERO).unwrap();
        d.erase_block(0, 2, SimTime::ZERO).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("card.img");
        d.save_image(&path).unwrap();
        let e = SimFlashDevice::load_image(&path).unwrap();
        assert_eq!(e.bad_blocks(), vec![(0, 7)]);
        assert_eq!(e.peek_data(PageAddress::new(1, 3, 0)).unwrap(), page);
        assert_eq!(&e.peek_spare(PageAddress::new(1, 3, 0)).unwrap()[..3], &[1, 2, 3]);
        assert_eq!(e.erase_count(0, 2), 1);
        assert_eq!(e.stats(), d.stats());
        std::fs::write(&path, b"garbage").unwrap();
        assert!(SimFlashDevice::load_image(&path).is_err());
    }
}
