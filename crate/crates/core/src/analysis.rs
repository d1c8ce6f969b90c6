//! Post-processing of latency traces and throughput reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::PolicyName;
use crate::dram::AccessClass;
use crate::engine::{LatencyEntry, LatencyTrace, ThroughputReport};
use crate::timing::TimingParams;

/// Margin above `modal + t_rp + t_rcd` for a sample to count as a spike.
pub const SPIKE_MARGIN_CYCLES: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("found {found} latency spikes above {threshold} cycles; at least 2 are needed")]
    InsufficientSpikes { found: usize, threshold: u32 },
}

/// What a latency sample is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Hit,
    Closed,
    Miss,
    RefreshAffected,
}

impl Population {
    /// The population a simulator ground-truth tag corresponds to.
    pub fn from_truth(class: AccessClass, refresh_stalled: bool) -> Self {
        if refresh_stalled {
            return Population::RefreshAffected;
        }
        match class {
            AccessClass::PageHit => Population::Hit,
            AccessClass::PageClosed => Population::Closed,
            AccessClass::PageMiss => Population::Miss,
        }
    }

    pub fn of_entry(entry: &LatencyEntry) -> Self {
        Self::from_truth(entry.truth.class, entry.truth.refresh_stalled)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Populations {
    pub hit: u64,
    pub closed: u64,
    pub miss: u64,
    pub refresh_affected: u64,
}

impl Populations {
    fn add(&mut self, p: Population) {
        match p {
            Population::Hit => self.hit += 1,
            Population::Closed => self.closed += 1,
            Population::Miss => self.miss += 1,
            Population::RefreshAffected => self.refresh_affected += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.hit + self.closed + self.miss + self.refresh_affected
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    /// Latency in cycles to number of samples.
    pub buckets: BTreeMap<u32, u64>,
    /// Most frequent latency; the smallest one on ties. `None` when empty.
    pub modal_latency: Option<u32>,
    pub populations: Populations,
    /// Per-sample attribution, in trace order.
    #[serde(skip)]
    pub labels: Vec<Population>,
}

impl LatencyHistogram {
    pub fn total(&self) -> u64 {
        self.buckets.values().sum()
    }
}

fn modal(buckets: &BTreeMap<u32, u64>) -> Option<u32> {
    let mut best: Option<(u32, u64)> = None;
    for (&lat, &n) in buckets {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((lat, n));
        }
    }
    best.map(|(lat, _)| lat)
}

/// Attributes one latency to a population. `offset` is added to every
/// reference level (route latency plus any extra data beats).
pub fn classify_latency(latency: u32, params: &TimingParams, offset: u32) -> Population {
    let levels = [
        (params.hit_latency() + offset, Population::Hit),
        (params.closed_latency() + offset, Population::Closed),
        (params.miss_latency() + offset, Population::Miss),
    ];
    for (level, pop) in levels {
        if latency.abs_diff(level) <= 1 {
            return pop;
        }
    }
    if latency > levels[2].0 {
        return Population::RefreshAffected;
    }
    // Between levels: attribute to the nearest one.
    levels
        .iter()
        .min_by_key(|(level, _)| latency.abs_diff(*level))
        .map(|&(_, pop)| pop)
        .unwrap_or(Population::Hit)
}

/// Histogram of a trace with each sample matched to hit / closed / miss
/// within one cycle, shifted by `route_extra`.
pub fn classify_trace(trace: &LatencyTrace, params: &TimingParams, route_extra: u32) -> LatencyHistogram {
    let mut h = LatencyHistogram::default();
    for entry in &trace.entries {
        *h.buckets.entry(entry.latency).or_insert(0) += 1;
        let pop = classify_latency(entry.latency, params, route_extra);
        h.populations.add(pop);
        h.labels.push(pop);
    }
    h.modal_latency = modal(&h.buckets);
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshEstimate {
    pub interval_ns: f64,
    pub spike_count: usize,
    pub spike_threshold: u32,
    /// Completion cycles of the spiking samples. A stalled read finishes a
    /// fixed delay after the refresh ends, so these are periodic even when
    /// issue times are not.
    pub spike_cycles: Vec<u64>,
}

impl RefreshEstimate {
    /// Spacing in cycles between consecutive spikes.
    pub fn spacings(&self) -> Vec<u64> {
        self.spike_cycles.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Default spike threshold: modal latency plus the precharge and activate
/// delays plus a margin.
pub fn default_spike_threshold(trace: &LatencyTrace, params: &TimingParams) -> u32 {
    let buckets = trace.latencies().fold(BTreeMap::new(), |mut m, l| {
        *m.entry(l).or_insert(0u64) += 1;
        m
    });
    modal(&buckets).unwrap_or(0) + params.t_rp + params.t_rcd + SPIKE_MARGIN_CYCLES
}

pub fn detect_refresh_interval(
    trace: &LatencyTrace,
    params: &TimingParams,
) -> Result<RefreshEstimate, AnalysisError> {
    let threshold = default_spike_threshold(trace, params);
    detect_refresh_interval_with_threshold(trace, params.clock_mhz, threshold)
}

/// Mean completion-time spacing between consecutive samples above `threshold`,
/// in nanoseconds.
pub fn detect_refresh_interval_with_threshold(
    trace: &LatencyTrace,
    clock_mhz: f64,
    threshold: u32,
) -> Result<RefreshEstimate, AnalysisError> {
    let spikes: Vec<u64> = trace
        .entries
        .iter()
        .filter(|e| e.latency > threshold)
        .map(|e| e.issue_cycle + e.latency as u64)
        .collect();
    if spikes.len() < 2 {
        return Err(AnalysisError::InsufficientSpikes { found: spikes.len(), threshold });
    }
    let span = spikes[spikes.len() - 1] - spikes[0];
    let mean_cycles = span as f64 / (spikes.len() - 1) as f64;
    Ok(RefreshEstimate {
        interval_ns: mean_cycles * 1000.0 / clock_mhz,
        spike_count: spikes.len(),
        spike_threshold: threshold,
        spike_cycles: spikes,
    })
}

/// One throughput measurement in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub policy: String,
    pub burst: u64,
    pub stride: u64,
    pub working_set: u64,
    pub report: ThroughputReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: String,
    #[serde(rename = "B")]
    pub burst: u64,
    #[serde(rename = "S")]
    pub stride: u64,
    #[serde(rename = "W")]
    pub working_set: u64,
    pub gbps: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "policy,B,S,W,gbps";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{:.4}", self.policy, self.burst, self.stride, self.working_set, self.gbps)
    }
}

/// Built-in policies sort in table order, custom labels after them.
fn policy_rank(label: &str) -> (usize, String) {
    match label.parse::<PolicyName>() {
        Ok(p) => (PolicyName::ALL.iter().position(|&q| q == p).unwrap_or(0), String::new()),
        Err(_) => (PolicyName::ALL.len(), label.to_string()),
    }
}

/// One row per point, ordered by policy, then B, then S, then W.
pub fn summarize_sweep(points: &[SweepPoint]) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = points
        .iter()
        .map(|p| SweepRow {
            policy: p.policy.clone(),
            burst: p.burst,
            stride: p.stride,
            working_set: p.working_set,
            gbps: p.report.gbps,
        })
        .collect();
    rows.sort_by(|a, b| {
        (policy_rank(&a.policy), a.burst, a.stride, a.working_set).cmp(&(
            policy_rank(&b.policy),
            b.burst,
            b.stride,
            b.working_set,
        ))
    });
    rows
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SweepRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// Looks up the row for `(policy, B, S)`, any W.
pub fn find_row<'a>(rows: &'a [SweepRow], policy: &str, burst: u64, stride: u64) -> Option<&'a SweepRow> {
    rows.iter().find(|r| r.policy.eq_ignore_ascii_case(policy) && r.burst == burst && r.stride == stride)
}
