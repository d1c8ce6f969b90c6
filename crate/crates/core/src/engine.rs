//! Traffic engine bound to one AXI channel.
//!
//! The engine walks a repetitive sequential traversal: transaction `i`
//! touches `B` bytes at `A + (i * S) % W`. It runs in one of three modes:
//!
//! * latency: strictly serial reads, each issued when the previous one's
//!   data has returned, recording per-transaction latency;
//! * read / write throughput: a saturating issuer that keeps up to
//!   `outstanding_limit` transactions in flight.
//!
//! In throughput mode each transaction is split into minimum-size bursts
//! (32 B on HBM, 64 B on DDR4), each decoded on its own, so policies that
//! place bank-group bits at the bottom of the address spread one AXI burst
//! over several bank groups. The controller keeps a FIFO per bank and
//! issues, each cycle, the oldest bank head whose column command is legal.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::{AddrError, DecodedAddress, MappingPolicy, MemoryKind};
use crate::dram::{AccessClass, ChannelStats, Direction, PseudoChannel, BANKS};
use crate::interconnect::Route;
use crate::timing::TimingParams;

pub const DEFAULT_OUTSTANDING_LIMIT: usize = 64;
pub const DEFAULT_TRACE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RstError {
    #[error("B = {0} must be a power of two")]
    BurstNotPowerOfTwo(u64),
    #[error("B = {burst} is below the {min}-byte minimum for {kind}")]
    BurstTooSmall { burst: u64, min: u64, kind: MemoryKind },
    #[error("S = {0} must be a power of two")]
    StrideNotPowerOfTwo(u64),
    #[error("W = {0} must be a power of two greater than 16")]
    BadWorkingSet(u64),
    #[error("S = {stride} must not exceed W = {working_set}")]
    StrideExceedsWorkingSet { stride: u64, working_set: u64 },
    #[error("A = {addr:#x} must be aligned to {align} bytes")]
    UnalignedStart { addr: u64, align: u64 },
    #[error("traversal [{start:#x}, {end:#x}) exceeds the {limit:#x}-byte channel")]
    OutOfRange { start: u64, end: u64, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("invalid traversal: {0}")]
    InvalidConfig(#[from] RstError),
    #[error(transparent)]
    Address(#[from] AddrError),
    #[error("policy is for {policy} but the channel timing is for a {bus}-byte bus")]
    KindMismatch { policy: MemoryKind, bus: u32 },
}

/// Runtime parameters of one traversal task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RstConfig {
    /// Initial byte address.
    #[serde(rename = "a")]
    pub start: u64,
    /// Burst size in bytes.
    #[serde(rename = "b")]
    pub burst: u64,
    /// Stride in bytes.
    #[serde(rename = "s")]
    pub stride: u64,
    /// Working-set size in bytes.
    #[serde(rename = "w")]
    pub working_set: u64,
    /// Number of transactions.
    #[serde(rename = "n")]
    pub count: u64,
}

impl RstConfig {
    pub fn new(start: u64, burst: u64, stride: u64, working_set: u64, count: u64) -> Self {
        RstConfig { start, burst, stride, working_set, count }
    }

    pub fn validate(&self, kind: MemoryKind) -> Result<(), RstError> {
        if !self.burst.is_power_of_two() {
            return Err(RstError::BurstNotPowerOfTwo(self.burst));
        }
        let min = kind.min_burst_bytes();
        if self.burst < min {
            return Err(RstError::BurstTooSmall { burst: self.burst, min, kind });
        }
        if !self.stride.is_power_of_two() {
            return Err(RstError::StrideNotPowerOfTwo(self.stride));
        }
        if !self.working_set.is_power_of_two() || self.working_set <= 16 {
            return Err(RstError::BadWorkingSet(self.working_set));
        }
        if self.stride > self.working_set {
            return Err(RstError::StrideExceedsWorkingSet {
                stride: self.stride,
                working_set: self.working_set,
            });
        }
        if !self.start.is_multiple_of(min) {
            return Err(RstError::UnalignedStart { addr: self.start, align: min });
        }
        // S divides W, so the highest start address is A + W - S.
        let end = self
            .start
            .checked_add(self.working_set - self.stride)
            .and_then(|a| a.checked_add(self.burst))
            .unwrap_or(u64::MAX);
        let limit = kind.address_space();
        if end > limit {
            return Err(RstError::OutOfRange { start: self.start, end, limit });
        }
        Ok(())
    }

    /// Address of transaction `i`: `A + (i * S) % W`.
    pub fn address(&self, i: u64) -> u64 {
        // S is a power of two no larger than W, so (i*S) % W == (i % (W/S)) * S
        // without the overflow of i*S.
        let period = self.working_set / self.stride;
        self.start + (i % period) * self.stride
    }
}

pub fn gen_address(cfg: &RstConfig, i: u64) -> u64 {
    cfg.address(i)
}

/// Ground truth recorded by the channel for one traced transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthTag {
    pub class: AccessClass,
    pub refresh_stalled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub index: u64,
    pub issue_cycle: u64,
    pub latency: u32,
    pub truth: TruthTag,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyTrace {
    pub capacity: usize,
    pub entries: Vec<LatencyEntry>,
}

impl LatencyTrace {
    pub fn with_capacity(capacity: usize) -> Self {
        LatencyTrace { capacity, entries: Vec::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latencies(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.latency)
    }

    /// Latencies as the hardware latency list stores them: one byte each,
    /// saturating at 255.
    pub fn to_u8_latencies(&self) -> Vec<u8> {
        self.latencies().map(|l| l.min(u8::MAX as u32) as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub hits: u64,
    pub closed: u64,
    pub misses: u64,
}

impl ClassCounts {
    fn between(before: &ChannelStats, after: &ChannelStats) -> Self {
        ClassCounts {
            hits: after.hits - before.hits,
            closed: after.closed - before.closed,
            misses: after.misses - before.misses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub transactions: u64,
    pub bytes: u64,
    pub cycles: u64,
    pub clock_mhz: f64,
    pub gbps: f64,
    /// Column commands by row-buffer outcome.
    pub commands: ClassCounts,
}

impl ThroughputReport {
    fn new(
        transactions: u64,
        bytes: u64,
        cycles: u64,
        clock_mhz: f64,
        factor: f64,
        commands: ClassCounts,
    ) -> Self {
        let gbps = if cycles == 0 {
            0.0
        } else {
            bytes as f64 * clock_mhz / cycles as f64 / 1000.0 * factor
        };
        ThroughputReport { transactions, bytes, cycles, clock_mhz, gbps, commands }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineOptions {
    pub outstanding_limit: usize,
    pub trace_capacity: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            outstanding_limit: DEFAULT_OUTSTANDING_LIMIT,
            trace_capacity: DEFAULT_TRACE_CAPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    txn: usize,
    seq: u64,
    coords: DecodedAddress,
    ready: u64,
}

/// One engine driving one pseudo channel through one route.
#[derive(Debug, Clone)]
pub struct Engine {
    policy: MappingPolicy,
    channel: PseudoChannel,
    route: Route,
    options: EngineOptions,
}

impl Engine {
    pub fn new(policy: MappingPolicy, timing: TimingParams, route: Route) -> Result<Self, EngineError> {
        let kind = policy.kind();
        if timing.bus_bytes_per_cycle as u64 > kind.min_burst_bytes() {
            return Err(EngineError::KindMismatch { policy: kind, bus: timing.bus_bytes_per_cycle });
        }
        Ok(Engine { policy, channel: PseudoChannel::new(timing), route, options: EngineOptions::default() })
    }

    pub fn with_options(mut self, options: EngineOptions) -> Self {
        self.options = options;
        self
    }

    pub fn channel(&self) -> &PseudoChannel {
        &self.channel
    }

    pub fn policy(&self) -> &MappingPolicy {
        &self.policy
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    /// Serial reads: transaction `i+1` is issued the cycle transaction `i`
    /// returns its data.
    pub fn run_read_latency(&mut self, cfg: &RstConfig) -> Result<LatencyTrace, EngineError> {
        cfg.validate(self.policy.kind())?;
        let mut trace = LatencyTrace::with_capacity(self.options.trace_capacity);
        let mut issue = self.channel.now();
        for i in 0..cfg.count {
            let coords = self.policy.decode(cfg.address(i))?;
            let s = self.channel.service_read(coords, cfg.burst, issue);
            let done = s.completion + self.route.extra_cycles as u64;
            if trace.entries.len() < trace.capacity {
                trace.entries.push(LatencyEntry {
                    index: i,
                    issue_cycle: issue,
                    latency: (done - issue) as u32,
                    truth: TruthTag { class: s.class, refresh_stalled: s.refresh_stalled },
                });
            }
            issue = done;
        }
        Ok(trace)
    }

    pub fn run_read_throughput(&mut self, cfg: &RstConfig) -> Result<ThroughputReport, EngineError> {
        self.run_throughput(cfg, Direction::Read)
    }

    pub fn run_write_throughput(&mut self, cfg: &RstConfig) -> Result<ThroughputReport, EngineError> {
        self.run_throughput(cfg, Direction::Write)
    }

    fn run_throughput(&mut self, cfg: &RstConfig, dir: Direction) -> Result<ThroughputReport, EngineError> {
        let kind = self.policy.kind();
        cfg.validate(kind)?;
        let timing = self.channel.timing().clone();
        let start = self.channel.now();
        let stats_before = self.channel.stats();

        let atom = kind.min_burst_bytes();
        let atoms = (cfg.burst / atom) as usize;
        let beats = atom / timing.bus_bytes_per_cycle as u64;
        let depth = timing.queue_depth as usize;
        let limit = self.options.outstanding_limit.max(1);
        let count = cfg.count as usize;
        let extra = self.route.extra_cycles as u64;

        let mut queues: [VecDeque<Pending>; BANKS] = Default::default();
        let mut queued = 0usize;
        let mut remaining = vec![0u32; count];
        let mut done_at = vec![0u64; count];
        let mut in_flight: BinaryHeap<Reverse<u64>> = BinaryHeap::new();
        let mut outstanding = 0usize;
        let mut next_txn = 0usize;
        let mut next_admit = start;
        let mut splitting: Option<(usize, u64)> = None;
        let mut seq = 0u64;
        let mut end = start;
        let mut t = start;

        while next_txn < count || queued > 0 || splitting.is_some() {
            self.channel.advance_to(t);
            while let Some(&Reverse(c)) = in_flight.peek() {
                if c > t {
                    break;
                }
                in_flight.pop();
                outstanding -= 1;
            }
            let mut progressed = false;

            if splitting.is_none() && next_txn < count && outstanding < limit && t >= next_admit {
                splitting = Some((next_txn, 0u64));
                remaining[next_txn] = atoms as u32;
                outstanding += 1;
                next_txn += 1;
                next_admit = t + timing.cmd_interval as u64;
                progressed = true;
            }
            // The burst enters the reorder queue one column command at a
            // time, as space frees up.
            while let Some((txn, k)) = splitting {
                if queued >= depth {
                    break;
                }
                let coords = self.policy.decode(cfg.address(txn as u64) + k * atom)?;
                queues[coords.bank_index()].push_back(Pending { txn, seq, coords, ready: t });
                seq += 1;
                queued += 1;
                splitting = if k + 1 < atoms as u64 { Some((txn, k + 1)) } else { None };
                progressed = true;
            }

            let mut best: Option<(u64, usize)> = None;
            let mut best_plan = None;
            let mut next_event = u64::MAX;
            for (bank, q) in queues.iter().enumerate() {
                let Some(head) = q.front() else { continue };
                let plan = self.channel.plan(head.coords, beats, head.ready, t);
                if self.channel.refresh_conflict(plan.first_command(), plan.completion).is_some() {
                    // Retried once the refresh has been applied.
                    continue;
                }
                if plan.column == t {
                    if best.is_none_or(|(s, _)| head.seq < s) {
                        best = Some((head.seq, bank));
                        best_plan = Some(plan);
                    }
                } else {
                    next_event = next_event.min(plan.column);
                }
            }
            if let (Some((_, bank)), Some(plan)) = (best, best_plan) {
                let p = queues[bank].pop_front().expect("head exists");
                queued -= 1;
                self.channel.commit(&plan, dir);
                let done = plan.completion + extra;
                done_at[p.txn] = done_at[p.txn].max(done);
                remaining[p.txn] -= 1;
                if remaining[p.txn] == 0 {
                    in_flight.push(Reverse(done_at[p.txn]));
                    end = end.max(done_at[p.txn]);
                }
                progressed = true;
            }

            let next = if progressed {
                t + 1
            } else {
                let mut next = next_event.min(self.channel.next_refresh_start());
                if next_txn < count && splitting.is_none() {
                    if outstanding < limit {
                        next = next.min(next_admit);
                    } else if let Some(&Reverse(c)) = in_flight.peek() {
                        next = next.min(c);
                    }
                }
                next
            };
            t = next.max(t + 1);
        }
        // Let the channel clock reach the end of the run so a following run
        // starts after this one.
        self.channel.advance_to(end);

        Ok(ThroughputReport::new(
            cfg.count,
            cfg.count * cfg.burst,
            end - start,
            timing.clock_mhz,
            self.route.throughput_factor,
            ClassCounts::between(&stats_before, &self.channel.stats()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::PolicyName;
    use proptest::prelude::*;

    /// Reference generator: walk from A adding S, wrapping back by W.
    fn iterative_addresses(cfg: &RstConfig, n: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut offset = 0u64;
        for _ in 0..n {
            out.push(cfg.start + offset);
            offset += cfg.stride;
            if offset >= cfg.working_set {
                offset -= cfg.working_set;
            }
        }
        out
    }

    fn hbm_engine(policy: PolicyName) -> Engine {
        Engine::new(
            MappingPolicy::builtin(MemoryKind::Hbm, policy).unwrap(),
            TimingParams::hbm_u280(),
            Route::local(0),
        )
        .unwrap()
    }

    fn ddr4_engine() -> Engine {
        Engine::new(MappingPolicy::default_for(MemoryKind::Ddr4), TimingParams::ddr4_u280(), Route::local(0))
            .unwrap()
    }

    #[test]
    fn address_examples() {
        assert_eq!(gen_address(&RstConfig::new(0, 32, 64, 256, 10), 5), 64);
        assert_eq!(gen_address(&RstConfig::new(0, 32, 128, 1024, 10), 0), 0);
        assert_eq!(gen_address(&RstConfig::new(0x40, 32, 4096, 1 << 20, 10), 0), 0x40);
        let same = RstConfig::new(0x1000, 32, 0x100, 0x100, 10);
        assert_eq!(gen_address(&same, 7), 0x1000);
    }

    #[test]
    fn validation_errors() {
        let k = MemoryKind::Hbm;
        assert_eq!(
            RstConfig::new(0, 16, 64, 1024, 1).validate(k),
            Err(RstError::BurstTooSmall { burst: 16, min: 32, kind: k })
        );
        assert!(matches!(
            RstConfig::new(0, 32, 64, 1024, 1).validate(MemoryKind::Ddr4),
            Err(RstError::BurstTooSmall { .. })
        ));
        assert!(matches!(RstConfig::new(0, 48, 64, 1024, 1).validate(k), Err(RstError::BurstNotPowerOfTwo(48))));
        assert!(matches!(RstConfig::new(0, 32, 96, 1024, 1).validate(k), Err(RstError::StrideNotPowerOfTwo(96))));
        assert!(matches!(RstConfig::new(0, 32, 16, 16, 1).validate(k), Err(RstError::BadWorkingSet(16))));
        assert!(matches!(
            RstConfig::new(0, 32, 2048, 1024, 1).validate(k),
            Err(RstError::StrideExceedsWorkingSet { .. })
        ));
        assert!(matches!(RstConfig::new(8, 32, 64, 1024, 1).validate(k), Err(RstError::UnalignedStart { .. })));
        assert!(matches!(
            RstConfig::new(64, 32, 64, 1 << 28, 1).validate(k),
            Err(RstError::OutOfRange { .. })
        ));
        RstConfig::new(0, 32, 64, 1 << 28, 1).validate(k).unwrap();
    }

    #[test]
    fn miss_every_access_at_128k_stride() {
        let mut e = hbm_engine(PolicyName::Rgbcg);
        let trace = e.run_read_latency(&RstConfig::new(0, 32, 128 << 10, 0x100_0000, 1024)).unwrap();
        assert_eq!(trace.len(), 1024);
        let refreshes = e.channel().stats().refreshes as usize;
        let unstalled: Vec<u32> =
            trace.entries.iter().filter(|x| !x.truth.refresh_stalled).map(|x| x.latency).collect();
        // A refresh between two accesses leaves the bank closed for the next one.
        assert!(unstalled.iter().all(|&l| l == 62 || l == 55));
        assert!(unstalled.iter().filter(|&&l| l == 55).count() <= refreshes + 1);
        assert!(unstalled.iter().filter(|&&l| l == 62).count() > 900);
    }

    #[test]
    fn ddr4_miss_latency() {
        let mut e = ddr4_engine();
        let trace = e.run_read_latency(&RstConfig::new(0, 64, 128 << 10, 0x100_0000, 1024)).unwrap();
        let misses = trace.latencies().filter(|&l| l == 32).count();
        assert!(misses > 1000, "{misses}");
    }

    #[test]
    fn small_stride_mostly_hits() {
        let mut e = hbm_engine(PolicyName::Rgbcg);
        let trace = e.run_read_latency(&RstConfig::new(0, 32, 128, 0x100_0000, 1024)).unwrap();
        let hits = trace.latencies().filter(|&l| l == 48).count();
        assert!(hits > 800, "{hits}");
        assert!(trace.latencies().all(|l| l >= 48));
    }

    #[test]
    fn serial_issue_waits_for_previous_data() {
        let mut e = hbm_engine(PolicyName::Rbc);
        let trace = e.run_read_latency(&RstConfig::new(0, 64, 4096, 1 << 24, 600)).unwrap();
        for pair in trace.entries.windows(2) {
            assert_eq!(pair[1].issue_cycle, pair[0].issue_cycle + pair[0].latency as u64);
        }
    }

    #[test]
    fn trace_capacity_and_clamp() {
        let mut e = hbm_engine(PolicyName::Rgbcg)
            .with_options(EngineOptions { trace_capacity: 10, ..Default::default() });
        let trace = e.run_read_latency(&RstConfig::new(0, 32, 64, 1 << 20, 100)).unwrap();
        assert_eq!(trace.len(), 10);
        let synthetic = LatencyTrace {
            capacity: 2,
            entries: vec![
                LatencyEntry {
                    index: 0,
                    issue_cycle: 0,
                    latency: 300,
                    truth: TruthTag { class: AccessClass::PageHit, refresh_stalled: true },
                },
                LatencyEntry {
                    index: 1,
                    issue_cycle: 300,
                    latency: 48,
                    truth: TruthTag { class: AccessClass::PageHit, refresh_stalled: false },
                },
            ],
        };
        assert_eq!(synthetic.to_u8_latencies(), vec![255, 48]);
    }

    #[test]
    fn empty_run() {
        let mut e = hbm_engine(PolicyName::Rgbcg);
        let r = e.run_write_throughput(&RstConfig::new(0, 64, 64, 1 << 20, 0)).unwrap();
        assert_eq!((r.transactions, r.bytes, r.cycles), (0, 0, 0));
        assert_eq!(r.gbps, 0.0);
    }

    #[test]
    fn invalid_burst_rejected_in_every_mode() {
        let mut e = ddr4_engine();
        let cfg = RstConfig::new(0, 32, 64, 1 << 20, 10);
        assert!(matches!(e.run_write_throughput(&cfg), Err(EngineError::InvalidConfig(_))));
        assert!(matches!(e.run_read_throughput(&cfg), Err(EngineError::InvalidConfig(_))));
        assert!(matches!(e.run_read_latency(&cfg), Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn write_matches_read_throughput() {
        let cfg = RstConfig::new(0, 64, 64, 1 << 28, 20_000);
        let r = hbm_engine(PolicyName::Rgbcg).run_read_throughput(&cfg).unwrap();
        let w = hbm_engine(PolicyName::Rgbcg).run_write_throughput(&cfg).unwrap();
        assert!((w.gbps - r.gbps).abs() / r.gbps < 0.05);
        assert_eq!(w.bytes, 64 * 20_000);
    }

    #[test]
    fn same_address_writes_hit() {
        let mut e = hbm_engine(PolicyName::Rgbcg);
        let r = e.run_write_throughput(&RstConfig::new(0, 32, 64, 64, 500)).unwrap();
        // One activate at the start and one after each refresh.
        assert_eq!(r.commands.misses, 0);
        assert_eq!(r.commands.closed, 1 + e.channel().stats().refreshes);
    }

    #[test]
    fn throughput_beats_serial_and_stays_under_peak() {
        let cfg = RstConfig::new(0, 64, 64, 1 << 28, 5000);
        let mut e = hbm_engine(PolicyName::Rgbcg);
        let trace = e.run_read_latency(&cfg).unwrap();
        let serial_cycles: u64 = trace.latencies().map(u64::from).sum::<u64>();
        let serial_gbps = (1024 * 64) as f64 * 450.0 / serial_cycles as f64 / 1000.0;
        let r = hbm_engine(PolicyName::Rgbcg).run_read_throughput(&cfg).unwrap();
        assert!(r.gbps > serial_gbps);
        assert!(r.gbps <= 14.4);
        let miss_floor = r.bytes as f64 * 450.0 / (cfg.count as f64 * 62.0) / 1000.0;
        assert!(r.gbps >= miss_floor);
    }

    proptest! {
        #[test]
        fn generator_matches_iterative_walk(
            w_log in 5u32..28,
            s_log in 0u32..28,
            a_units in 0u64..1024,
            n in 0u64..2000,
        ) {
            let w = 1u64 << w_log;
            let s = 1u64 << s_log.min(w_log);
            let cfg = RstConfig::new(a_units * 32, 32, s, w, n);
            let expect = iterative_addresses(&cfg, n);
            let got: Vec<u64> = (0..n).map(|i| gen_address(&cfg, i)).collect();
            prop_assert_eq!(got, expect);
        }
    }
}
