//! Per-memory-kind clock and DRAM timing constants.
//!
//! All cycle counts are in controller (AXI) clock cycles: 450 MHz for HBM,
//! 300 MHz for DDR4. Refresh timing is given in nanoseconds and converted
//! with [`TimingParams::ns_to_cycles`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::MemoryKind;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimingError {
    #[error("timing parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown timing preset {0:?} (expected \"hbm-u280\" or \"ddr4-u280\")")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    pub clock_mhz: f64,
    /// Idle page-hit read latency, issue to last data beat.
    pub t_cas: u32,
    /// Activate to column command.
    pub t_rcd: u32,
    /// Precharge to activate.
    pub t_rp: u32,
    /// Activate to precharge, same bank.
    pub t_ras: u32,
    /// Column to column, different bank group.
    pub t_ccd_s: u32,
    /// Column to column, same bank group.
    pub t_ccd_l: u32,
    pub t_refi_ns: f64,
    pub t_rfc_ns: f64,
    pub bus_bytes_per_cycle: u32,
    /// Fixed scheduling cost per column command, in (fractional) cycles of
    /// data-bus time.
    pub efficiency_overhead: f64,
    /// Minimum spacing between two transactions accepted by the controller.
    pub cmd_interval: u32,
    /// Column commands the controller may hold and reorder across banks.
    pub queue_depth: u32,
}

impl TimingParams {
    pub const HBM_PRESET: &'static str = "hbm-u280";
    pub const DDR4_PRESET: &'static str = "ddr4-u280";

    pub fn hbm_u280() -> Self {
        TimingParams {
            clock_mhz: 450.0,
            t_cas: 48,
            t_rcd: 7,
            t_rp: 7,
            t_ras: 20,
            t_ccd_s: 1,
            t_ccd_l: 2,
            t_refi_ns: 7800.0,
            t_rfc_ns: 160.0,
            bus_bytes_per_cycle: 32,
            efficiency_overhead: 0.045,
            cmd_interval: 2,
            queue_depth: 16,
        }
    }

    pub fn ddr4_u280() -> Self {
        TimingParams {
            clock_mhz: 300.0,
            t_cas: 22,
            t_rcd: 5,
            t_rp: 5,
            t_ras: 27,
            t_ccd_s: 1,
            t_ccd_l: 1,
            t_refi_ns: 7800.0,
            t_rfc_ns: 350.0,
            bus_bytes_per_cycle: 64,
            efficiency_overhead: 0.005,
            cmd_interval: 1,
            queue_depth: 8,
        }
    }

    pub fn for_kind(kind: MemoryKind) -> Self {
        match kind {
            MemoryKind::Hbm => Self::hbm_u280(),
            MemoryKind::Ddr4 => Self::ddr4_u280(),
        }
    }

    pub fn preset(name: &str) -> Result<Self, TimingError> {
        match name.to_ascii_lowercase().as_str() {
            Self::HBM_PRESET => Ok(Self::hbm_u280()),
            Self::DDR4_PRESET => Ok(Self::ddr4_u280()),
            _ => Err(TimingError::UnknownPreset(name.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        fn bad(field: &'static str, reason: impl Into<String>) -> TimingError {
            TimingError::Invalid { field, reason: reason.into() }
        }
        if !(self.clock_mhz.is_finite() && self.clock_mhz > 0.0) {
            return Err(bad("clock_mhz", "must be positive"));
        }
        if self.t_ccd_s < 1 {
            return Err(bad("t_ccd_s", "must be at least 1"));
        }
        if self.t_ccd_l < self.t_ccd_s {
            return Err(bad("t_ccd_l", "must not be smaller than t_ccd_s"));
        }
        if !(self.t_rfc_ns.is_finite() && self.t_rfc_ns >= 0.0) {
            return Err(bad("t_rfc_ns", "must be non-negative"));
        }
        if !(self.t_refi_ns.is_finite() && self.t_refi_ns > self.t_rfc_ns) {
            return Err(bad("t_refi_ns", "must exceed t_rfc_ns"));
        }
        if self.refi_cycles() <= self.rfc_cycles() {
            return Err(bad("t_refi_ns", "refresh windows would overlap after rounding"));
        }
        if self.bus_bytes_per_cycle == 0 || !self.bus_bytes_per_cycle.is_power_of_two() {
            return Err(bad("bus_bytes_per_cycle", "must be a power of two"));
        }
        if !(self.efficiency_overhead.is_finite() && self.efficiency_overhead >= 0.0) {
            return Err(bad("efficiency_overhead", "must be non-negative"));
        }
        if self.cmd_interval < 1 {
            return Err(bad("cmd_interval", "must be at least 1"));
        }
        if self.queue_depth < 1 {
            return Err(bad("queue_depth", "must be at least 1"));
        }
        Ok(())
    }

    pub fn ns_to_cycles(&self, ns: f64) -> f64 {
        ns * self.clock_mhz / 1000.0
    }

    pub fn cycles_to_ns(&self, cycles: f64) -> f64 {
        cycles * 1000.0 / self.clock_mhz
    }

    /// Refresh period in cycles (rounded to nearest).
    pub fn refi_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_refi_ns).round() as u64
    }

    /// Refresh stall in cycles (rounded up).
    pub fn rfc_cycles(&self) -> u64 {
        self.ns_to_cycles(self.t_rfc_ns).ceil() as u64
    }

    pub fn hit_latency(&self) -> u32 {
        self.t_cas
    }

    pub fn closed_latency(&self) -> u32 {
        self.t_cas + self.t_rcd
    }

    pub fn miss_latency(&self) -> u32 {
        self.t_cas + self.t_rp + self.t_rcd
    }

    /// Peak data-bus bandwidth in GB/s.
    pub fn peak_gbps(&self) -> f64 {
        self.bus_bytes_per_cycle as f64 * self.clock_mhz * 1e6 / 1e9
    }
}
