//! Library surface of the simulation harness: experiment specs, the runner,
//! figure presets and solution-bundle verification. The `irsbf` binary is a
//! thin argument parser over these modules.

pub mod bundle;
pub mod figures;
pub mod runner;
pub mod spec;
