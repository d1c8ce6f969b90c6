//! Built-in experiment suites.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ChannelPair, ExperimentConfig, Mode, RstSweep};
use super::run::{execute, render, to_pretty_json, ExperimentResult, RunArtifact, RunError};
use crate::addrmap::{MemoryKind, PolicyName};
use crate::analysis::{sweep_csv, SweepRow};
use crate::interconnect::{AXI_CHANNELS, MINI_SWITCHES, PORTS_PER_MINI_SWITCH};
use crate::timing::TimingParams;

/// Working set for the throughput sweeps.
pub const SWEEP_WORKING_SET: u64 = 0x1000_0000;
/// Working set for the latency experiments.
pub const LATENCY_WORKING_SET: u64 = 0x100_0000;
/// Transactions per channel in the sequential-throughput table.
pub const TABLE6_TRANSACTIONS: u64 = 200_000;
pub const SWEEP_TRANSACTIONS: u64 = 20_000;
pub const LATENCY_TRANSACTIONS: u64 = 1024;
/// Stride that hits the open page on almost every access.
pub const HIT_STRIDE: u64 = 128;
/// Stride that misses the open page on every access.
pub const MISS_STRIDE: u64 = 128 << 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
}

pub const PRESETS: [PresetInfo; 7] = [
    PresetInfo { name: "table4", description: "idle page hit / closed / miss latency, HBM and DDR4" },
    PresetInfo { name: "table5", description: "HBM latency from each mini-switch to channel 0 through the switch" },
    PresetInfo { name: "table6", description: "sequential read throughput per channel and aggregate, HBM and DDR4" },
    PresetInfo { name: "fig4-refresh", description: "refresh interval from serial read latency spikes" },
    PresetInfo { name: "fig5-policy-sweep", description: "throughput over mapping policy x stride x burst" },
    PresetInfo { name: "fig7-locality", description: "throughput with an 8K versus a 256M working set" },
    PresetInfo { name: "fig8-switch-throughput", description: "throughput from each mini-switch to channel 0" },
];

pub fn list_presets() -> &'static [PresetInfo] {
    &PRESETS
}

fn unknown(name: &str) -> RunError {
    RunError::UnknownPreset {
        name: name.to_string(),
        valid: PRESETS.iter().map(|p| p.name).collect::<Vec<_>>().join(", "),
    }
}

fn rst(b: Vec<u64>, s: Vec<u64>, w: Vec<u64>, n: u64) -> RstSweep {
    RstSweep { a: 0, b: b.into(), s: s.into(), w: w.into(), n }
}

fn latency_exp(name: &str, kind: MemoryKind) -> ExperimentConfig {
    ExperimentConfig::new(
        name,
        kind,
        Mode::Latency,
        rst(
            vec![kind.min_burst_bytes()],
            vec![HIT_STRIDE, MISS_STRIDE],
            vec![LATENCY_WORKING_SET],
            LATENCY_TRANSACTIONS,
        ),
    )
}

fn all_policies(kind: MemoryKind) -> Vec<String> {
    kind.policies().iter().map(|p| p.as_str().to_string()).collect()
}

fn sweep_bursts(kind: MemoryKind) -> Vec<u64> {
    match kind {
        MemoryKind::Hbm => vec![32, 64, 128, 256],
        MemoryKind::Ddr4 => vec![64, 128, 256, 512],
    }
}

/// Powers of two from `lo` to `hi` inclusive.
fn pow2_range(lo: u64, hi: u64) -> Vec<u64> {
    std::iter::successors(Some(lo), |&x| (x < hi).then_some(x * 2)).collect()
}

/// One experiment per burst size, strides from `max(B, 64)` to 64K.
fn policy_sweep(kind: MemoryKind) -> Vec<ExperimentConfig> {
    sweep_bursts(kind)
        .into_iter()
        .map(|b| {
            let mut c = ExperimentConfig::new(
                &format!("{}-B{b}", kind_tag(kind)),
                kind,
                Mode::ReadThroughput,
                rst(vec![b], pow2_range(b.max(64), 64 << 10), vec![SWEEP_WORKING_SET], SWEEP_TRANSACTIONS),
            );
            c.policy = Some(all_policies(kind).into());
            c
        })
        .collect()
}

fn locality_sweep(kind: MemoryKind) -> Vec<ExperimentConfig> {
    sweep_bursts(kind)
        .into_iter()
        .map(|b| {
            ExperimentConfig::new(
                &format!("{}-B{b}", kind_tag(kind)),
                kind,
                Mode::ReadThroughput,
                rst(vec![b], pow2_range(b.max(64), 8 << 10), vec![8 << 10, SWEEP_WORKING_SET], SWEEP_TRANSACTIONS),
            )
        })
        .collect()
}

/// One route per mini-switch, from its first AXI port to channel 0.
fn to_channel0() -> Vec<ChannelPair> {
    (0..MINI_SWITCHES).map(|m| ChannelPair { axi: m * PORTS_PER_MINI_SWITCH, hbm: 0 }).collect()
}

fn kind_tag(kind: MemoryKind) -> &'static str {
    match kind {
        MemoryKind::Hbm => "hbm",
        MemoryKind::Ddr4 => "ddr4",
    }
}

/// The experiments a preset runs, in output order.
pub fn preset_experiments(name: &str) -> Result<Vec<ExperimentConfig>, RunError> {
    let exps = match name {
        "table4" => vec![latency_exp("hbm", MemoryKind::Hbm), latency_exp("ddr4", MemoryKind::Ddr4)],
        "table5" => {
            let mut c = latency_exp("hbm-switch", MemoryKind::Hbm);
            c.switch.enabled = true;
            c.channels = to_channel0();
            vec![c]
        }
        "table6" => [MemoryKind::Hbm, MemoryKind::Ddr4]
            .into_iter()
            .map(|kind| {
                let seq = kind.min_burst_bytes().max(64);
                let mut c = ExperimentConfig::new(
                    kind_tag(kind),
                    kind,
                    Mode::ReadThroughput,
                    rst(vec![seq], vec![seq], vec![SWEEP_WORKING_SET], TABLE6_TRANSACTIONS),
                );
                let n = match kind {
                    MemoryKind::Hbm => AXI_CHANNELS,
                    MemoryKind::Ddr4 => super::config::DDR4_CHANNELS,
                };
                c.channels = (0..n).map(ChannelPair::local).collect();
                c
            })
            .collect(),
        "fig4-refresh" => [MemoryKind::Hbm, MemoryKind::Ddr4]
            .into_iter()
            .map(|kind| {
                let mut c = latency_exp(kind_tag(kind), kind);
                c.rst.s = HIT_STRIDE.into();
                c
            })
            .collect(),
        "fig5-policy-sweep" => [policy_sweep(MemoryKind::Hbm), policy_sweep(MemoryKind::Ddr4)].concat(),
        "fig7-locality" => [locality_sweep(MemoryKind::Hbm), locality_sweep(MemoryKind::Ddr4)].concat(),
        "fig8-switch-throughput" => {
            let mut c = ExperimentConfig::new(
                "hbm-switch",
                MemoryKind::Hbm,
                Mode::ReadThroughput,
                rst(sweep_bursts(MemoryKind::Hbm), vec![64], vec![SWEEP_WORKING_SET], SWEEP_TRANSACTIONS),
            );
            c.rst.s = vec![32, 64, 128, 256].into();
            c.switch.enabled = true;
            c.channels = to_channel0();
            // Sequential traversal: S = B for every burst size.
            return Ok(sweep_bursts(MemoryKind::Hbm)
                .into_iter()
                .map(|b| {
                    let mut e = c.clone();
                    e.name = format!("hbm-switch-B{b}");
                    e.rst.b = b.into();
                    e.rst.s = b.into();
                    e
                })
                .collect());
        }
        _ => return Err(unknown(name)),
    };
    Ok(exps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyCell {
    pub cycles: u32,
    pub ns: f64,
}

impl LatencyCell {
    fn new(cycles: u32, t: &TimingParams) -> Self {
        LatencyCell { cycles, ns: t.cycles_to_ns(cycles as f64) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub hit: Option<LatencyCell>,
    pub closed: Option<LatencyCell>,
    pub miss: Option<LatencyCell>,
}

/// Hit / closed / miss latency over every channel at `channel_idx`.
fn latency_row(result: &ExperimentResult, channel_idx: usize) -> LatencyRow {
    let pick = |f: fn(&super::run::PopulationLatency) -> Option<u32>| {
        result
            .points
            .iter()
            .filter_map(|p| p.channels.get(channel_idx)?.latency.as_ref())
            .find_map(|l| f(&l.population_latency))
            .map(|c| LatencyCell::new(c, &result.timing))
    };
    LatencyRow { hit: pick(|p| p.hit), closed: pick(|p| p.closed), miss: pick(|p| p.miss) }
}

fn derive_table4(results: &[ExperimentResult]) -> Value {
    json!({
        "hbm": latency_row(&results[0], 0),
        "ddr4": latency_row(&results[1], 0),
    })
}

fn derive_table5(results: &[ExperimentResult]) -> Value {
    let r = &results[0];
    let rows: Vec<Value> = r.config.channels.iter().enumerate().map(|(i, ch)| {
        let m = ch.axi / PORTS_PER_MINI_SWITCH;
        json!({
            "mini_switch": m,
            "axi_channels": format!("{}-{}", m * PORTS_PER_MINI_SWITCH, m * PORTS_PER_MINI_SWITCH + PORTS_PER_MINI_SWITCH - 1),
            "hbm_channel": ch.hbm,
            "latency": latency_row(r, i),
        })
    }).collect();
    let hits: Vec<u32> = (0..r.config.channels.len()).filter_map(|i| latency_row(r, i).hit.map(|c| c.cycles)).collect();
    let spread = hits.iter().max().zip(hits.iter().min()).map(|(a, b)| a - b);
    json!({ "rows": rows, "max_spread_cycles": spread })
}

fn derive_table6(results: &[ExperimentResult]) -> Value {
    let mut out = serde_json::Map::new();
    for r in results {
        let p = &r.points[0];
        let per: Vec<f64> = p.channels.iter().filter_map(|c| c.throughput.as_ref()).map(|t| t.gbps).collect();
        out.insert(
            r.config.name.clone(),
            json!({
                "channels": per.len(),
                "per_channel_gbps": per.first(),
                "aggregate_gbps": p.aggregate_gbps,
                "channel_gbps": per,
            }),
        );
    }
    Value::Object(out)
}

fn derive_fig4(results: &[ExperimentResult]) -> Value {
    let mut out = serde_json::Map::new();
    for r in results {
        let lat = r.points[0].channels[0].latency.as_ref().expect("latency mode");
        let value = match &lat.refresh {
            Some(est) => {
                let refi = r.timing.refi_cycles() as i64;
                let spacings = est.spacings();
                let max_dev = spacings.iter().map(|&s| (s as i64 - refi).abs()).max().unwrap_or(0);
                json!({
                    "interval_ns": est.interval_ns,
                    "configured_ns": r.timing.t_refi_ns,
                    "spike_count": est.spike_count,
                    "spike_threshold": est.spike_threshold,
                    "spacings_cycles": spacings,
                    "max_spacing_deviation_cycles": max_dev,
                })
            }
            None => Value::Null,
        };
        out.insert(r.config.name.clone(), value);
    }
    Value::Object(out)
}

/// Rows of every experiment for one memory kind.
fn rows_for(results: &[ExperimentResult], kind: MemoryKind) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> =
        results.iter().filter(|r| r.config.memory == kind).flat_map(|r| r.sweep_rows()).collect();
    rows.sort_by(|a, b| {
        let rank = |p: &str| p.parse::<PolicyName>().map(|x| x as usize).unwrap_or(usize::MAX);
        (rank(&a.policy), a.burst, a.stride, a.working_set).cmp(&(rank(&b.policy), b.burst, b.stride, b.working_set))
    });
    rows
}

/// Points where some policy beats the default one.
pub fn default_policy_violations(rows: &[SweepRow], kind: MemoryKind) -> Vec<Value> {
    let default = kind.default_policy().as_str();
    let mut keys: Vec<(u64, u64, u64)> = rows.iter().map(|r| (r.burst, r.stride, r.working_set)).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut out = Vec::new();
    for (b, s, w) in keys {
        let at: Vec<&SweepRow> = rows.iter().filter(|r| (r.burst, r.stride, r.working_set) == (b, s, w)).collect();
        let Some(def) = at.iter().find(|r| r.policy == default) else { continue };
        let best = at.iter().fold(at[0], |m, r| if r.gbps > m.gbps { r } else { m });
        if best.gbps > def.gbps {
            out.push(json!({
                "B": b, "S": s, "W": w,
                "default_gbps": def.gbps,
                "best_policy": best.policy,
                "best_gbps": best.gbps,
            }));
        }
    }
    out
}

fn derive_fig5(results: &[ExperimentResult]) -> Value {
    let mut out = serde_json::Map::new();
    for kind in [MemoryKind::Hbm, MemoryKind::Ddr4] {
        let rows = rows_for(results, kind);
        let violations = default_policy_violations(&rows, kind);
        out.insert(
            kind_tag(kind).to_string(),
            json!({
                "default_policy": kind.default_policy().as_str(),
                "points": rows.len(),
                "default_maximal_everywhere": violations.is_empty(),
                "violations": violations,
            }),
        );
    }
    Value::Object(out)
}

fn derive_fig7(results: &[ExperimentResult]) -> Value {
    let mut out = serde_json::Map::new();
    for kind in [MemoryKind::Hbm, MemoryKind::Ddr4] {
        let rows = rows_for(results, kind);
        let mut table = Vec::new();
        for r in rows.iter().filter(|r| r.working_set == 8 << 10) {
            if let Some(big) = rows
                .iter()
                .find(|x| x.burst == r.burst && x.stride == r.stride && x.working_set == SWEEP_WORKING_SET)
            {
                table.push(json!({
                    "B": r.burst, "S": r.stride,
                    "gbps_w8k": r.gbps, "gbps_w256m": big.gbps,
                    "ratio": r.gbps / big.gbps,
                }));
            }
        }
        out.insert(kind_tag(kind).to_string(), Value::Array(table));
    }
    Value::Object(out)
}

fn derive_fig8(results: &[ExperimentResult]) -> Value {
    let rows: Vec<Value> = results
        .iter()
        .map(|r| {
            let p = &r.points[0];
            let per: Vec<f64> = p.channels.iter().filter_map(|c| c.throughput.as_ref()).map(|t| t.gbps).collect();
            let max = per.iter().cloned().fold(f64::MIN, f64::max);
            let min = per.iter().cloned().fold(f64::MAX, f64::min);
            json!({ "B": p.b, "gbps_by_mini_switch": per, "max_relative_spread": (max - min) / max })
        })
        .collect();
    Value::Array(rows)
}

/// Result of running a preset.
#[derive(Debug, Clone)]
pub struct PresetOutcome {
    pub name: String,
    pub results: Vec<ExperimentResult>,
    pub derived: Value,
}

impl PresetOutcome {
    pub fn experiment(&self, name: &str) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.config.name == name)
    }

    /// Sweep rows of every experiment for one memory kind.
    pub fn rows(&self, kind: MemoryKind) -> Vec<SweepRow> {
        rows_for(&self.results, kind)
    }

    /// `summary.json` at the top, each experiment's files under its name,
    /// and combined per-memory sweep CSVs for sweep presets.
    pub fn artifact(&self) -> RunArtifact {
        let mut art = RunArtifact::default();
        let info = PRESETS.iter().find(|p| p.name == self.name);
        let configs: Vec<&ExperimentConfig> = self.results.iter().map(|r| &r.config).collect();
        let summary = json!({
            "preset": self.name,
            "description": info.map(|p| p.description),
            "derived": self.derived,
            "experiments": configs,
        });
        art.insert("summary.json", to_pretty_json(&summary));
        for r in &self.results {
            art.nest(&r.config.name, render(r));
        }
        if self.results.iter().all(|r| r.config.mode.is_throughput()) {
            for kind in [MemoryKind::Hbm, MemoryKind::Ddr4] {
                let rows = self.rows(kind);
                if !rows.is_empty() {
                    art.insert(format!("{}_sweep.csv", kind_tag(kind)), sweep_csv(&rows));
                }
            }
        }
        art
    }
}

pub fn run_preset(name: &str) -> Result<PresetOutcome, RunError> {
    let experiments = preset_experiments(name)?;
    let plans = experiments.iter().map(|c| c.plan()).collect::<Result<Vec<_>, _>>()?;
    let results = plans.iter().map(execute).collect::<Result<Vec<_>, _>>()?;
    let derived = match name {
        "table4" => derive_table4(&results),
        "table5" => derive_table5(&results),
        "table6" => derive_table6(&results),
        "fig4-refresh" => derive_fig4(&results),
        "fig5-policy-sweep" => derive_fig5(&results),
        "fig7-locality" => derive_fig7(&results),
        "fig8-switch-throughput" => derive_fig8(&results),
        _ => return Err(unknown(name)),
    };
    Ok(PresetOutcome { name: name.to_string(), results, derived })
}
