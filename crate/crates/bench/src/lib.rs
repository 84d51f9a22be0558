//! Desk-scale experiment harness for `parftl`: closed-loop workload clients,
//! synthetic aging, evaluation presets and report files.

pub mod aging;
pub mod presets;
pub mod report;
pub mod runner;
pub mod workload;
