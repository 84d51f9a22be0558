use std::io::Write;

use parking_lot::Mutex;

use crate::time::SimTime;

pub const GC_EVENT_HEADER: &str = "timestamp_us,event,bank,block,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcEventKind {
    /// A collector starts a round while `permitted` collectors may run.
    RoundStart { worker: u32, permitted: u32 },
    VictimSelected { valid: u32, level: u32 },
    Copy { lpn: u32 },
    Erase,
    ThrottleChange { active_io: u32, permitted: u32 },
    ExclusiveSet,
    ExclusiveClear,
    /// Inline collection forced by a card with no room for host writes.
    Emergency { valid: u32 },
}

impl GcEventKind {
    pub fn name(&self) -> &'static str {
        match self {
            GcEventKind::RoundStart { .. } => "round-start",
            GcEventKind::VictimSelected { .. } => "victim-selected",
            GcEventKind::Copy { .. } => "copy",
            GcEventKind::Erase => "erase",
            GcEventKind::ThrottleChange { .. } => "throttle-change",
            GcEventKind::ExclusiveSet => "exclusive-set",
            GcEventKind::ExclusiveClear => "exclusive-clear",
            GcEventKind::Emergency { .. } => "emergency",
        }
    }

    fn detail(&self) -> String {
        match *self {
            GcEventKind::RoundStart { worker, permitted } => format!("worker={worker} permitted={permitted}"),
            GcEventKind::VictimSelected { valid, level } => format!("valid={valid} level={level}"),
            GcEventKind::Copy { lpn } => format!("lpn={lpn}"),
            GcEventKind::ThrottleChange { active_io, permitted } => {
                format!("active_io={active_io} permitted={permitted}")
            }
            GcEventKind::Emergency { valid } => format!("valid={valid}"),
            GcEventKind::Erase | GcEventKind::ExclusiveSet | GcEventKind::ExclusiveClear => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GcEvent {
    pub at: SimTime,
    pub kind: GcEventKind,
    pub bank: Option<u32>,
    pub block: Option<u32>,
}

#[derive(Default)]
pub struct GcEventLog {
    events: Mutex<Vec<GcEvent>>,
}

impl GcEventLog {
    pub fn push(&self, at: SimTime, kind: GcEventKind, bank: Option<u32>, block: Option<u32>) {
        self.events.lock().push(GcEvent { at, kind, bank, block });
    }

    pub fn snapshot(&self) -> Vec<GcEvent> {
        self.events.lock().clone()
    }

    pub fn clear(&self) {
        self.events.lock().clear();
    }
}

/// Writes events as CSV under [`GC_EVENT_HEADER`].
pub fn write_csv(events: &[GcEvent], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{GC_EVENT_HEADER}")?;
    let opt = |v: Option<u32>| v.map(|v| v.to_string()).unwrap_or_default();
    for e in events {
        writeln!(
            out,
            "{:.3},{},{},{},{}",
            e.at.as_us(),
            e.kind.name(),
            opt(e.bank),
            opt(e.block),
            e.kind.detail()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let log = GcEventLog::default();
        log.push(SimTime(1500), GcEventKind::Erase, Some(2), Some(7));
        log.push(SimTime(2000), GcEventKind::ThrottleChange { active_io: 3, permitted: 8 }, None, None);
        let mut buf = Vec::new();
        write_csv(&log.snapshot(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], GC_EVENT_HEADER);
        assert_eq!(lines[1], "1.500,erase,2,7,");
        assert_eq!(lines[2], "2.000,throttle-change,,,active_io=3 permitted=8");
    }
}
