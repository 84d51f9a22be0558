use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{DeviceResult, DeviceStats, FlashGeometry, LatencyModel, PageAddress, SimFlashDevice};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    Read,
    Write,
    Erase,
}

impl RequestKind {
    fn as_str(self) -> &'static str {
        match self {
            RequestKind::Read => "read",
            RequestKind::Write => "write",
            RequestKind::Erase => "erase",
        }
    }
}

/// One serviced request, as exported to the request-log CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestLogEntry {
    pub request_id: u64,
    pub kind: RequestKind,
    pub bank: u32,
    pub block: u32,
    pub page: u32,
    pub submit_ts_us: f64,
    pub complete_ts_us: f64,
}

pub const REQUEST_LOG_HEADER: &str = "request_id,kind,bank,block,page,submit_ts_us,complete_ts_us";

impl RequestLogEntry {
    pub fn write_csv<W: Write>(entries: &[RequestLogEntry], mut out: W) -> std::io::Result<()> {
        writeln!(out, "{REQUEST_LOG_HEADER}")?;
        for e in entries {
            writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3}",
                e.request_id,
                e.kind.as_str(),
                e.bank,
                e.block,
                e.page,
                e.submit_ts_us,
                e.complete_ts_us
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<RequestLogEntry>, String> {
        let mut out = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(format!("line {}: expected 7 fields", i + 1));
            }
            let bad = |what: &str| format!("line {}: bad {what}", i + 1);
            let kind = match f[1] {
                "read" => RequestKind::Read,
                "write" => RequestKind::Write,
                "erase" => RequestKind::Erase,
                _ => return Err(bad("kind")),
            };
            out.push(RequestLogEntry {
                request_id: f[0].parse().map_err(|_| bad("request_id"))?,
                kind,
                bank: f[2].parse().map_err(|_| bad("bank"))?,
                block: f[3].parse().map_err(|_| bad("block"))?,
                page: f[4].parse().map_err(|_| bad("page"))?,
                submit_ts_us: f[5].parse().map_err(|_| bad("submit_ts_us"))?,
                complete_ts_us: f[6].parse().map_err(|_| bad("complete_ts_us"))?,
            });
        }
        Ok(out)
    }
}

/// Re-issues a request log against a fresh card and returns its counters.
///
/// Writes carry a filler payload and reads fetch a single read unit, so
/// every counter except `read_units` is reproduced.
pub fn replay(
    geometry: &FlashGeometry,
    model: &LatencyModel,
    entries: &[RequestLogEntry],
) -> DeviceResult<DeviceStats> {
    let dev = SimFlashDevice::new(geometry.clone(), model.clone(), &[])?;
    let page = vec![0u8; geometry.page_size as usize];
    let mut ordered: Vec<&RequestLogEntry> = entries.iter().collect();
    ordered.sort_by_key(|e| e.request_id);
    for e in ordered {
        let at = SimTime::from_us(e.submit_ts_us);
        let addr = PageAddress::new(e.bank, e.block, e.page);
        match e.kind {
            RequestKind::Write => {
                dev.write_page(addr, &page, &[], at)?;
            }
            RequestKind::Read => {
                dev.read_page(addr, 0, geometry.read_unit, false, at)?;
            }
            RequestKind::Erase => {
                dev.erase_block(e.bank, e.block, at)?;
            }
        }
    }
    Ok(dev.stats())
}
