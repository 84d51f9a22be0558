use thiserror::Error;

use crate::sim_flash::PageAddress;

/// Errors raised by the simulated flash card.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("invalid device configuration: {0}")]
    Config(String),
    #[error("address out of range: {0}")]
    Address(String),
    #[error("non-sequential program of {addr}: next writable page is {expected}")]
    Sequencing { addr: PageAddress, expected: u32 },
    #[error("page {0} already programmed since last erase")]
    Overwrite(PageAddress),
    #[error("block {block} of bank {bank} is bad")]
    BadBlock { bank: u32, block: u32 },
    #[error("DMA queue {queue} is full")]
    Backpressure { queue: usize },
    #[error("stored page {0} failed its parity check")]
    Corrupt(PageAddress),
    #[error("device halted by a simulated power cut")]
    Halted,
}

/// Top-level error type of the FTL.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("logical address {0} beyond exported capacity")]
    OutOfRange(u64),
    #[error("no free block available in bank {bank:?}")]
    Exhausted { bank: Option<u32> },
    #[error("garbage collection of bank {bank} block {block} needs {needed} pages, only {available} available")]
    GcNoRoom { bank: u32, block: u32, needed: u32, available: u32 },
    #[error("flush incomplete, {} logical pages left unflushed", .0.len())]
    FlushIncomplete(Vec<u32>),
    #[error("checkpoint failure: {0}")]
    Checkpoint(String),
    #[error("state audit failed: {0}")]
    Audit(String),
    #[error("engine is shut down")]
    Shutdown,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt image: {0}")]
    Image(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
