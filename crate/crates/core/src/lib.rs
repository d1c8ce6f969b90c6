//! Deterministic HBM / DDR4 channel simulator and benchmark harness.

pub mod addrmap;
pub mod analysis;
pub mod dram;
pub mod engine;
pub mod harness;
pub mod interconnect;
pub mod timing;
