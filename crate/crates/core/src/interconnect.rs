//! Latency model for the AXI-to-pseudo-channel switch.
//!
//! 32 AXI ports and 32 pseudo channels are grouped into eight fully
//! connected four-port mini-switches; neighbouring mini-switches are linked.
//! Routing through the switch costs a fixed traversal latency plus a
//! penalty that depends only on the pair of mini-switches involved.
//!
//! Only routes into mini-switch 0 were measured on hardware. Penalties for
//! other pairs are an extrapolation: the sum of the measured per-hop steps
//! along the path, so the large step between mini-switches 3 and 4 (the
//! crossing between the two stacks) applies to every route that crosses it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AXI_CHANNELS: usize = 32;
pub const MINI_SWITCHES: usize = 8;
pub const PORTS_PER_MINI_SWITCH: usize = 4;

/// Extra cycles for any access that goes through the switch.
pub const SWITCH_TRAVERSAL_CYCLES: u32 = 7;

/// Measured penalty from mini-switch `m` to mini-switch 0.
pub const MEASURED_PENALTY_TO_0: [u32; MINI_SWITCHES] = [0, 1, 3, 5, 16, 18, 20, 22];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("channel index {0} out of range (0..=31)")]
    ChannelOutOfRange(usize),
    #[error("AXI channel {axi} cannot reach HBM channel {hbm} with the switch disabled")]
    NonLocalWithoutSwitch { axi: usize, hbm: usize },
    #[error("penalty override must be an 8x8 matrix")]
    BadOverride,
}

pub fn mini_switch(channel: usize) -> usize {
    channel / PORTS_PER_MINI_SWITCH
}

/// Sum of the per-hop costs between two mini-switches. Hop `m -> m+1` costs
/// what the measured column shows for that same hop.
fn extrapolated_penalty(src: usize, dst: usize) -> u32 {
    let (lo, hi) = (src.min(dst), src.max(dst));
    (lo..hi).map(|m| MEASURED_PENALTY_TO_0[m + 1] - MEASURED_PENALTY_TO_0[m]).sum()
}

/// A resolved AXI-to-pseudo-channel route.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub axi: usize,
    pub hbm: usize,
    pub extra_cycles: u32,
    pub throughput_factor: f64,
}

impl Route {
    /// Direct attachment with no switch in the path.
    pub fn local(channel: usize) -> Self {
        Route { axi: channel, hbm: channel, extra_cycles: 0, throughput_factor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchTopology {
    pub enabled: bool,
    /// `latency_penalty[src][dst]` in cycles, on top of the traversal cost.
    pub latency_penalty: Vec<Vec<u32>>,
}

impl Default for SwitchTopology {
    fn default() -> Self {
        Self::disabled()
    }
}

impl SwitchTopology {
    pub fn new(enabled: bool) -> Self {
        let latency_penalty = (0..MINI_SWITCHES)
            .map(|s| (0..MINI_SWITCHES).map(|d| extrapolated_penalty(s, d)).collect())
            .collect();
        SwitchTopology { enabled, latency_penalty }
    }

    pub fn enabled() -> Self {
        Self::new(true)
    }

    pub fn disabled() -> Self {
        Self::new(false)
    }

    pub fn with_penalties(enabled: bool, table: Vec<Vec<u32>>) -> Result<Self, RouteError> {
        if table.len() != MINI_SWITCHES || table.iter().any(|r| r.len() != MINI_SWITCHES) {
            return Err(RouteError::BadOverride);
        }
        Ok(SwitchTopology { enabled, latency_penalty: table })
    }

    pub fn check_route(&self, axi: usize, hbm: usize) -> Result<(), RouteError> {
        for ch in [axi, hbm] {
            if ch >= AXI_CHANNELS {
                return Err(RouteError::ChannelOutOfRange(ch));
            }
        }
        if !self.enabled && axi != hbm {
            return Err(RouteError::NonLocalWithoutSwitch { axi, hbm });
        }
        Ok(())
    }

    /// Extra cycles added to every transaction from `axi` to `hbm`.
    pub fn route_latency(&self, axi: usize, hbm: usize) -> Result<u32, RouteError> {
        self.check_route(axi, hbm)?;
        if !self.enabled {
            return Ok(0);
        }
        Ok(SWITCH_TRAVERSAL_CYCLES + self.latency_penalty[mini_switch(axi)][mini_switch(hbm)])
    }

    /// Throughput scaling for a single flow. Contention between flows is not
    /// modelled, so this is always 1.0 for a legal route.
    pub fn route_throughput_factor(&self, axi: usize, hbm: usize) -> Result<f64, RouteError> {
        self.check_route(axi, hbm)?;
        Ok(1.0)
    }

    pub fn route(&self, axi: usize, hbm: usize) -> Result<Route, RouteError> {
        Ok(Route {
            axi,
            hbm,
            extra_cycles: self.route_latency(axi, hbm)?,
            throughput_factor: self.route_throughput_factor(axi, hbm)?,
        })
    }
}
