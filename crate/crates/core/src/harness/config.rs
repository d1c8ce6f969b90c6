//! Experiment configuration: JSON schema, validation and expansion.
//!
//! ```json
//! {
//!   "name": "policy-sweep",
//!   "memory": "hbm",
//!   "policy": ["RGBCG", "BRC"],
//!   "switch": { "enabled": false },
//!   "timing": { "preset": "hbm-u280", "t_ras": 20 },
//!   "mode": "read_throughput",
//!   "rst": { "a": 0, "b": [32, 64], "s": [64, 128], "w": 268435456, "n": 20000 },
//!   "channels": [{ "axi": 0, "hbm": 0 }]
//! }
//! ```
//!
//! `policy`, `b`, `s` and `w` take a single value or a list; lists expand to
//! their Cartesian product.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::{MappingPolicy, MemoryKind};
use crate::engine::{RstConfig, DEFAULT_OUTSTANDING_LIMIT, DEFAULT_TRACE_CAPACITY};
use crate::interconnect::{Route, SwitchTopology, AXI_CHANNELS};
use crate::timing::TimingParams;

/// Number of DDR4 channels on the board.
pub const DDR4_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError { field: field.into(), message: message.to_string() }
    }
}

/// A value or a list of values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

impl<T> From<Vec<T>> for OneOrMany<T> {
    fn from(v: Vec<T>) -> Self {
        OneOrMany::Many(v)
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Latency,
    ReadThroughput,
    WriteThroughput,
}

impl Mode {
    pub fn is_throughput(self) -> bool {
        !matches!(self, Mode::Latency)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub enabled: bool,
    /// 8x8 penalty override, `[src][dst]` mini-switch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_penalty: Option<Vec<Vec<u32>>>,
}

/// A timing preset plus per-field overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_cas: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rcd: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rp: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ras: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ccd_s: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_ccd_l: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_refi_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_rfc_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency_overhead: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cmd_interval: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_depth: Option<u32>,
}

impl TimingSpec {
    pub fn resolve(&self, kind: MemoryKind) -> Result<TimingParams, ConfigError> {
        let mut t = match &self.preset {
            Some(name) => TimingParams::preset(name).map_err(|e| ConfigError::new("timing.preset", e))?,
            None => TimingParams::for_kind(kind),
        };
        if t.bus_bytes_per_cycle as u64 != kind.bus_bytes_per_cycle() {
            return Err(ConfigError::new(
                "timing.preset",
                format!("preset is for a {}-byte bus but {kind} uses {} bytes", t.bus_bytes_per_cycle, kind.bus_bytes_per_cycle()),
            ));
        }
        macro_rules! apply {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { t.$f = v; } )* };
        }
        apply!(
            clock_mhz, t_cas, t_rcd, t_rp, t_ras, t_ccd_s, t_ccd_l, t_refi_ns, t_rfc_ns, efficiency_overhead,
            cmd_interval, queue_depth
        );
        t.validate().map_err(|e| match e {
            crate::timing::TimingError::Invalid { field, reason } => ConfigError::new(format!("timing.{field}"), reason),
            other => ConfigError::new("timing", other),
        })?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RstSweep {
    #[serde(default)]
    pub a: u64,
    pub b: OneOrMany<u64>,
    pub s: OneOrMany<u64>,
    pub w: OneOrMany<u64>,
    pub n: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPair {
    pub axi: usize,
    pub hbm: usize,
}

impl ChannelPair {
    pub fn local(ch: usize) -> Self {
        ChannelPair { axi: ch, hbm: ch }
    }
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_channels() -> Vec<ChannelPair> {
    vec![ChannelPair::local(0)]
}

fn default_outstanding() -> usize {
    DEFAULT_OUTSTANDING_LIMIT
}

fn default_trace_capacity() -> usize {
    DEFAULT_TRACE_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub memory: MemoryKind,
    /// Built-in policy names or custom layouts such as `"14R-2BG-2B-5C"`.
    /// Defaults to the memory's default policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<OneOrMany<String>>,
    #[serde(default)]
    pub switch: SwitchConfig,
    #[serde(default)]
    pub timing: TimingSpec,
    pub mode: Mode,
    pub rst: RstSweep,
    #[serde(default = "default_channels")]
    pub channels: Vec<ChannelPair>,
    #[serde(default = "default_outstanding")]
    pub outstanding_limit: usize,
    #[serde(default = "default_trace_capacity")]
    pub trace_capacity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

/// One (policy, B, S, W) combination of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub policy: MappingPolicy,
    pub rst: RstConfig,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub config: ExperimentConfig,
    pub timing: TimingParams,
    pub routes: Vec<Route>,
    pub points: Vec<Point>,
}

impl ExperimentConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(name: &str, memory: MemoryKind, mode: Mode, rst: RstSweep) -> Self {
        ExperimentConfig {
            name: name.to_string(),
            memory,
            policy: None,
            switch: SwitchConfig::default(),
            timing: TimingSpec::default(),
            mode,
            rst,
            channels: default_channels(),
            outstanding_limit: DEFAULT_OUTSTANDING_LIMIT,
            trace_capacity: DEFAULT_TRACE_CAPACITY,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::new("config", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn policy_names(&self) -> Vec<String> {
        match &self.policy {
            Some(p) => p.to_vec(),
            None => vec![self.memory.default_policy().as_str().to_string()],
        }
    }

    pub fn topology(&self) -> Result<SwitchTopology, ConfigError> {
        match &self.switch.latency_penalty {
            Some(table) => SwitchTopology::with_penalties(self.switch.enabled, table.clone())
                .map_err(|e| ConfigError::new("switch.latency_penalty", e)),
            None => Ok(SwitchTopology::new(self.switch.enabled)),
        }
    }

    pub fn plan(&self) -> Result<Plan, ConfigError> {
        let kind = self.memory;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(ConfigError::new("name", "must be non-empty and contain no path separators"));
        }
        let timing = self.timing.resolve(kind)?;

        let names = self.policy_names();
        if names.is_empty() {
            return Err(ConfigError::new("policy", "list must not be empty"));
        }
        let mut policies = Vec::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            let p = if name.contains('-') {
                MappingPolicy::from_layout(kind, name, name)
            } else {
                MappingPolicy::named(kind, name)
            };
            policies.push(p.map_err(|e| ConfigError::new(format!("policy[{i}]"), e))?);
        }

        if self.channels.is_empty() {
            return Err(ConfigError::new("channels", "list must not be empty"));
        }
        let topo = self.topology()?;
        let mut routes = Vec::with_capacity(self.channels.len());
        for (i, ch) in self.channels.iter().enumerate() {
            let route = match kind {
                MemoryKind::Hbm => topo.route(ch.axi, ch.hbm).map_err(|e| ConfigError::new(format!("channels[{i}]"), e))?,
                MemoryKind::Ddr4 => {
                    if self.switch.enabled {
                        return Err(ConfigError::new("switch.enabled", "DDR4 channels have no switch"));
                    }
                    if ch.axi != ch.hbm || ch.axi >= DDR4_CHANNELS {
                        return Err(ConfigError::new(
                            format!("channels[{i}]"),
                            format!("DDR4 supports local channels 0..{DDR4_CHANNELS} only"),
                        ));
                    }
                    Route::local(ch.axi)
                }
            };
            routes.push(route);
        }
        debug_assert!(routes.len() <= AXI_CHANNELS);

        if self.outstanding_limit == 0 {
            return Err(ConfigError::new("outstanding_limit", "must be at least 1"));
        }

        let bs = self.rst.b.to_vec();
        let ss = self.rst.s.to_vec();
        let ws = self.rst.w.to_vec();
        for (field, list) in [("rst.b", &bs), ("rst.s", &ss), ("rst.w", &ws)] {
            if list.is_empty() {
                return Err(ConfigError::new(field, "list must not be empty"));
            }
        }
        let mut points = Vec::with_capacity(policies.len() * bs.len() * ss.len() * ws.len());
        for policy in &policies {
            for &b in &bs {
                for &s in &ss {
                    for &w in &ws {
                        let rst = RstConfig::new(self.rst.a, b, s, w, self.rst.n);
                        rst.validate(kind)
                            .map_err(|e| ConfigError::new(format!("rst (B={b}, S={s}, W={w})"), e))?;
                        points.push(Point { policy: policy.clone(), rst });
                    }
                }
            }
        }
        Ok(Plan { config: self.clone(), timing, routes, points })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plan().map(|_| ())
    }
}
