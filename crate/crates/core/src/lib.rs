//! A multi-threaded flash translation layer over a simulated multi-bank NAND
//! card.
//!
//! [`sim_flash`] models the card: banks on shared interfaces, per-bank busy
//! clocks, page spares with a parity check. [`Ftl`] holds the mapping
//! tables and the write buffers; [`io_engine`] serves sector requests from
//! several submission queues, and [`gc`] reclaims blocks under one of three
//! policies (on-demand, parallel background workers, or workers sized to
//! the IO load). [`checkpoint`] saves the tables at shutdown and finds them
//! again at start without scanning the card.
//!
//! [`Engine`] ties these together behind a block-device interface, driven
//! either by a seeded discrete-event scheduler or by OS threads.

mod aging;
pub mod checkpoint;
pub mod config;
mod engine;
pub mod error;
mod ftl;
pub mod ftl_state;
pub mod gc;
pub mod io_engine;
pub mod runtime;
pub mod sim_flash;
pub mod spare;
pub mod stats;
pub mod time;

pub use error::{DeviceError, Error, Result};
pub use ftl::Ftl;
pub use engine::{Engine, ShutdownReport, StartPath, StartReport};
