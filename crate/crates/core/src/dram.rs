//! Cycle-level state machine for a single pseudo channel.
//!
//! The model tracks, per bank, which row is open and when the next
//! activate/precharge/column command may be issued. Column commands are
//! further constrained by the bank-group column spacing (`t_ccd_s` across
//! groups, `t_ccd_l` within a group) and by the data bus. Refresh windows
//! recur every `t_refi`, last `t_rfc`, and close every bank.
//!
//! Activate and precharge commands to different banks overlap freely; there
//! is no tRRD/tFAW limit and no command-bus contention.

use serde::{Deserialize, Serialize};

use crate::addrmap::DecodedAddress;
use crate::timing::TimingParams;

pub const BANK_GROUPS: usize = 4;
pub const BANKS_PER_GROUP: usize = 4;
pub const BANKS: usize = BANK_GROUPS * BANKS_PER_GROUP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessClass {
    PageHit,
    PageClosed,
    PageMiss,
}

impl AccessClass {
    pub fn latency(self, t: &TimingParams) -> u32 {
        match self {
            AccessClass::PageHit => t.hit_latency(),
            AccessClass::PageClosed => t.closed_latency(),
            AccessClass::PageMiss => t.miss_latency(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BankState {
    pub open_row: Option<u32>,
    /// Earliest column command to the open row.
    col_ready: u64,
    /// Earliest precharge of the open row.
    pre_ready: u64,
    /// Earliest activate while the bank is closed.
    act_ready: u64,
}

/// Earliest legal command times for one access, not yet applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessPlan {
    pub coords: DecodedAddress,
    pub class: AccessClass,
    pub precharge: Option<u64>,
    pub activate: Option<u64>,
    pub column: u64,
    /// Cycle at which the last data beat is transferred.
    pub completion: u64,
    pub beats: u64,
}

impl AccessPlan {
    /// First cycle at which the access occupies the bank.
    pub fn first_command(&self) -> u64 {
        self.precharge.or(self.activate).unwrap_or(self.column)
    }
}

/// Outcome of a serially issued transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Serviced {
    pub completion: u64,
    pub class: AccessClass,
    /// The transaction was pushed past a refresh window.
    pub refresh_stalled: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub hits: u64,
    pub closed: u64,
    pub misses: u64,
    pub reads: u64,
    pub writes: u64,
    pub refreshes: u64,
}

/// Refresh windows `[k*t_refi, k*t_refi + t_rfc)` for `k >= 1` whose start
/// is not after `up_to`.
pub fn refresh_windows(params: &TimingParams, up_to: u64) -> Vec<(u64, u64)> {
    let refi = params.refi_cycles();
    let rfc = params.rfc_cycles();
    (1..)
        .map(|k| k * refi)
        .take_while(|&start| start <= up_to)
        .map(|start| (start, start + rfc))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PseudoChannel {
    timing: TimingParams,
    refi: u64,
    rfc: u64,
    banks: [BankState; BANKS],
    now: u64,
    last_col_group: [Option<u64>; BANK_GROUPS],
    last_col: Option<u64>,
    /// Earliest cycle the next column command may start its data transfer.
    bus_free_at: u64,
    overhead_acc: f64,
    /// Number of refresh windows already applied to the bank state.
    refreshes_applied: u64,
    stats: ChannelStats,
}

impl PseudoChannel {
    pub fn new(timing: TimingParams) -> Self {
        PseudoChannel {
            refi: timing.refi_cycles(),
            rfc: timing.rfc_cycles(),
            timing,
            banks: [BankState::default(); BANKS],
            now: 0,
            last_col_group: [None; BANK_GROUPS],
            last_col: None,
            bus_free_at: 0,
            overhead_acc: 0.0,
            refreshes_applied: 0,
            stats: ChannelStats::default(),
        }
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn bank(&self, coords: &DecodedAddress) -> &BankState {
        &self.banks[coords.bank_index()]
    }

    pub fn advance_to(&mut self, cycle: u64) {
        debug_assert!(cycle >= self.now);
        self.now = self.now.max(cycle);
        self.apply_refresh_until(cycle);
    }

    /// Start of the next refresh window that has not been applied yet.
    pub fn next_refresh_start(&self) -> u64 {
        (self.refreshes_applied + 1) * self.refi
    }

    /// Applies every refresh window starting at or before `cycle`.
    pub fn apply_refresh_until(&mut self, cycle: u64) {
        while self.next_refresh_start() <= cycle {
            let end = self.next_refresh_start() + self.rfc;
            for bank in &mut self.banks {
                bank.open_row = None;
                bank.act_ready = bank.act_ready.max(end);
            }
            self.refreshes_applied += 1;
            self.stats.refreshes += 1;
        }
    }

    /// The first refresh window overlapping `[from, to]`, if any.
    pub fn refresh_conflict(&self, from: u64, to: u64) -> Option<(u64, u64)> {
        let k = if from < self.rfc { 1 } else { (from - self.rfc) / self.refi + 1 };
        let start = k.max(1) * self.refi;
        (start <= to).then_some((start, start + self.rfc))
    }

    pub fn classify_access(&self, coords: &DecodedAddress) -> AccessClass {
        match self.bank(coords).open_row {
            Some(row) if row == coords.row => AccessClass::PageHit,
            Some(_) => AccessClass::PageMiss,
            None => AccessClass::PageClosed,
        }
    }

    /// Earliest schedule for an access whose request is available at
    /// `ready_at` and whose column command may not start before
    /// `column_floor`. Refresh windows are not considered here.
    pub fn plan(
        &self,
        coords: DecodedAddress,
        beats: u64,
        ready_at: u64,
        column_floor: u64,
    ) -> AccessPlan {
        let t = &self.timing;
        let bank = self.bank(&coords);
        let class = self.classify_access(&coords);
        let (precharge, activate, prepared) = match class {
            AccessClass::PageHit => (None, None, bank.col_ready.max(ready_at)),
            AccessClass::PageClosed => {
                let act = bank.act_ready.max(ready_at);
                (None, Some(act), act + t.t_rcd as u64)
            }
            AccessClass::PageMiss => {
                let pre = bank.pre_ready.max(ready_at);
                let act = pre + t.t_rp as u64;
                (Some(pre), Some(act), act + t.t_rcd as u64)
            }
        };
        let group = coords.bank_group as usize;
        let mut column = prepared.max(column_floor).max(self.bus_free_at);
        if let Some(c) = self.last_col_group[group] {
            column = column.max(c + t.t_ccd_l as u64);
        }
        if let Some(c) = self.last_col {
            column = column.max(c + t.t_ccd_s as u64);
        }
        // Idle latency covers the command pipeline through the first beat.
        let completion = column + t.t_cas as u64 + beats - 1;
        AccessPlan { coords, class, precharge, activate, column, completion, beats }
    }

    /// Applies a plan produced by [`plan`](Self::plan) against the current
    /// state.
    pub fn commit(&mut self, plan: &AccessPlan, dir: Direction) {
        let t = &self.timing;
        let idx = plan.coords.bank_index();
        let bank = &mut self.banks[idx];
        if let Some(act) = plan.activate {
            bank.open_row = Some(plan.coords.row);
            bank.col_ready = act + t.t_rcd as u64;
            bank.pre_ready = act + t.t_ras as u64;
        }
        bank.pre_ready = bank.pre_ready.max(plan.column + 1);
        // A later activate needs a precharge first; act_ready only matters
        // once a refresh closes the bank.
        bank.act_ready = bank.act_ready.max(plan.column + 1);

        self.last_col_group[plan.coords.bank_group as usize] = Some(plan.column);
        self.last_col = Some(plan.column);
        self.overhead_acc += t.efficiency_overhead;
        let bubble = self.overhead_acc.floor();
        self.overhead_acc -= bubble;
        self.bus_free_at = plan.column + plan.beats + bubble as u64;

        match plan.class {
            AccessClass::PageHit => self.stats.hits += 1,
            AccessClass::PageClosed => self.stats.closed += 1,
            AccessClass::PageMiss => self.stats.misses += 1,
        }
        match dir {
            Direction::Read => self.stats.reads += 1,
            Direction::Write => self.stats.writes += 1,
        }
    }

    fn beats(&self, burst_bytes: u64) -> u64 {
        let bus = self.timing.bus_bytes_per_cycle as u64;
        debug_assert!(burst_bytes > 0 && burst_bytes.is_multiple_of(bus));
        (burst_bytes / bus).max(1)
    }

    fn service(
        &mut self,
        coords: DecodedAddress,
        burst_bytes: u64,
        issue_cycle: u64,
        dir: Direction,
    ) -> Serviced {
        let beats = self.beats(burst_bytes);
        let mut ready = issue_cycle.max(self.now);
        self.advance_to(ready);
        // Arriving while a refresh is already in progress counts as stalled.
        let last_start = self.refreshes_applied * self.refi;
        let mut refresh_stalled = self.refreshes_applied > 0 && ready < last_start + self.rfc;
        loop {
            let plan = self.plan(coords, beats, ready, ready);
            match self.refresh_conflict(plan.first_command(), plan.completion) {
                Some((start, end)) => {
                    self.apply_refresh_until(start);
                    ready = ready.max(end);
                    refresh_stalled = true;
                }
                None => {
                    self.commit(&plan, dir);
                    return Serviced { completion: plan.completion, class: plan.class, refresh_stalled };
                }
            }
        }
    }

    /// Services one read that reaches the controller at `issue_cycle`.
    pub fn service_read(
        &mut self,
        coords: DecodedAddress,
        burst_bytes: u64,
        issue_cycle: u64,
    ) -> Serviced {
        self.service(coords, burst_bytes, issue_cycle, Direction::Read)
    }

    pub fn service_write(
        &mut self,
        coords: DecodedAddress,
        burst_bytes: u64,
        issue_cycle: u64,
    ) -> Serviced {
        self.service(coords, burst_bytes, issue_cycle, Direction::Write)
    }
}
