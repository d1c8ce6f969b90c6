//! Application address <-> DRAM coordinate mapping.
//!
//! A policy is a list of bit-field segments written most-significant first,
//! e.g. `14R-1BG-2B-5C-1BG`. The segments cover the address bits above the
//! burst offset (`[27:5]` on HBM, `[33:6]` on DDR4). A field may be split
//! across several segments; the segment that appears first contributes the
//! high-order bits of that field.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddrError {
    #[error("address {addr:#x} is not aligned to {align} bytes")]
    Unaligned { addr: u64, align: u64 },
    #[error("address {addr:#x} is outside the {limit:#x}-byte address space")]
    OutOfRange { addr: u64, limit: u64 },
    #[error("{field} value {value} does not fit in {width} bits")]
    CoordinateOutOfRange { field: Field, value: u64, width: u32 },
    #[error("invalid layout {layout:?}: {reason}")]
    BadLayout { layout: String, reason: String },
    #[error("unknown mapping policy {0:?} (expected one of RBC, RCB, BRC, RGBCG, BRGCG, RCBI)")]
    UnknownPolicy(String),
    #[error("policy {policy} is not defined for {kind}")]
    PolicyNotForKind { policy: PolicyName, kind: MemoryKind },
}

/// The two memory types on the board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    Hbm,
    Ddr4,
}

impl MemoryKind {
    /// Lowest address bit that takes part in the mapping.
    pub const fn addr_field_lo(self) -> u32 {
        match self {
            MemoryKind::Hbm => 5,
            MemoryKind::Ddr4 => 6,
        }
    }

    /// Highest address bit that takes part in the mapping (inclusive).
    pub const fn addr_field_hi(self) -> u32 {
        match self {
            MemoryKind::Hbm => 27,
            MemoryKind::Ddr4 => 33,
        }
    }

    pub const fn field_bits(self) -> u32 {
        self.addr_field_hi() - self.addr_field_lo() + 1
    }

    pub const fn min_burst_bytes(self) -> u64 {
        1 << self.addr_field_lo()
    }

    pub const fn bus_bytes_per_cycle(self) -> u64 {
        match self {
            MemoryKind::Hbm => 32,
            MemoryKind::Ddr4 => 64,
        }
    }

    pub const fn clock_mhz(self) -> f64 {
        match self {
            MemoryKind::Hbm => 450.0,
            MemoryKind::Ddr4 => 300.0,
        }
    }

    /// Size of one channel's address space in bytes.
    pub const fn address_space(self) -> u64 {
        1 << (self.addr_field_hi() + 1)
    }

    /// Total bits for each field, regardless of how a policy splits them.
    pub const fn field_width(self, field: Field) -> u32 {
        match (self, field) {
            (MemoryKind::Hbm, Field::Row) => 14,
            (MemoryKind::Ddr4, Field::Row) => 17,
            (_, Field::BankGroup) => 2,
            (_, Field::Bank) => 2,
            (MemoryKind::Hbm, Field::Column) => 5,
            (MemoryKind::Ddr4, Field::Column) => 7,
        }
    }

    /// Policy used when a config does not name one.
    pub const fn default_policy(self) -> PolicyName {
        match self {
            MemoryKind::Hbm => PolicyName::Rgbcg,
            MemoryKind::Ddr4 => PolicyName::Rcb,
        }
    }

    /// Built-in policies available for this kind, in table order.
    pub fn policies(self) -> &'static [PolicyName] {
        use PolicyName::*;
        match self {
            MemoryKind::Hbm => &[Rbc, Rcb, Brc, Rgbcg, Brgcg],
            MemoryKind::Ddr4 => &[Rbc, Rcb, Brc, Rcbi],
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MemoryKind::Hbm => "HBM",
            MemoryKind::Ddr4 => "DDR4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Row,
    BankGroup,
    Bank,
    Column,
}

impl Field {
    const ALL: [Field; 4] = [Field::Row, Field::BankGroup, Field::Bank, Field::Column];

    fn index(self) -> usize {
        self as usize
    }

    fn suffix(self) -> &'static str {
        match self {
            Field::Row => "R",
            Field::BankGroup => "BG",
            Field::Bank => "B",
            Field::Column => "C",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Row => "row",
            Field::BankGroup => "bank group",
            Field::Bank => "bank",
            Field::Column => "column",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub field: Field,
    pub width: u32,
}

impl Segment {
    pub const fn new(field: Field, width: u32) -> Self {
        Segment { field, width }
    }
}

/// Names of the built-in policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyName {
    Rbc,
    Rcb,
    Brc,
    Rgbcg,
    Brgcg,
    Rcbi,
}

impl PolicyName {
    pub const ALL: [PolicyName; 6] = [
        PolicyName::Rbc,
        PolicyName::Rcb,
        PolicyName::Brc,
        PolicyName::Rgbcg,
        PolicyName::Brgcg,
        PolicyName::Rcbi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::Rbc => "RBC",
            PolicyName::Rcb => "RCB",
            PolicyName::Brc => "BRC",
            PolicyName::Rgbcg => "RGBCG",
            PolicyName::Brgcg => "BRGCG",
            PolicyName::Rcbi => "RCBI",
        }
    }

    /// Layout string for `kind`, or `None` if the policy does not exist there.
    pub fn layout(self, kind: MemoryKind) -> Option<&'static str> {
        match (kind, self) {
            (MemoryKind::Hbm, PolicyName::Rbc) => Some("14R-2BG-2B-5C"),
            (MemoryKind::Hbm, PolicyName::Rcb) => Some("14R-5C-2BG-2B"),
            (MemoryKind::Hbm, PolicyName::Brc) => Some("2BG-2B-14R-5C"),
            (MemoryKind::Hbm, PolicyName::Rgbcg) => Some("14R-1BG-2B-5C-1BG"),
            (MemoryKind::Hbm, PolicyName::Brgcg) => Some("2B-14R-1BG-5C-1BG"),
            (MemoryKind::Hbm, PolicyName::Rcbi) => None,
            (MemoryKind::Ddr4, PolicyName::Rbc) => Some("17R-2BG-2B-7C"),
            (MemoryKind::Ddr4, PolicyName::Rcb) => Some("17R-7C-2B-2BG"),
            (MemoryKind::Ddr4, PolicyName::Brc) => Some("2BG-2B-17R-7C"),
            (MemoryKind::Ddr4, PolicyName::Rcbi) => Some("17R-6C-2B-1C-2BG"),
            (MemoryKind::Ddr4, PolicyName::Rgbcg | PolicyName::Brgcg) => None,
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = AddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| AddrError::UnknownPolicy(s.to_string()))
    }
}

impl Serialize for PolicyName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PolicyName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// DRAM coordinates of one burst-aligned address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DecodedAddress {
    pub row: u32,
    pub bank_group: u8,
    pub bank: u8,
    pub column: u32,
}

impl DecodedAddress {
    pub const fn new(row: u32, bank_group: u8, bank: u8, column: u32) -> Self {
        DecodedAddress { row, bank_group, bank, column }
    }

    fn get(&self, field: Field) -> u64 {
        match field {
            Field::Row => self.row as u64,
            Field::BankGroup => self.bank_group as u64,
            Field::Bank => self.bank as u64,
            Field::Column => self.column as u64,
        }
    }

    /// Flat bank index `bank_group * 4 + bank`.
    pub fn bank_index(&self) -> usize {
        self.bank_group as usize * 4 + self.bank as usize
    }
}

/// A named segment layout for one memory kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingPolicy {
    label: String,
    kind: MemoryKind,
    segments: Vec<Segment>,
}

impl MappingPolicy {
    pub fn builtin(kind: MemoryKind, name: PolicyName) -> Result<Self, AddrError> {
        let layout = name
            .layout(kind)
            .ok_or(AddrError::PolicyNotForKind { policy: name, kind })?;
        Self::from_layout(kind, name.as_str(), layout)
    }

    /// Looks up a built-in policy by its (case-insensitive) name.
    pub fn named(kind: MemoryKind, name: &str) -> Result<Self, AddrError> {
        Self::builtin(kind, name.parse()?)
    }

    pub fn default_for(kind: MemoryKind) -> Self {
        Self::builtin(kind, kind.default_policy()).expect("default policy exists")
    }

    /// Parses a layout such as `14R-1BG-2B-5C-1BG`.
    pub fn from_layout(
        kind: MemoryKind,
        label: impl Into<String>,
        layout: &str,
    ) -> Result<Self, AddrError> {
        let bad = |reason: String| AddrError::BadLayout { layout: layout.to_string(), reason };
        let mut segments = Vec::new();
        for part in layout.split('-') {
            let part = part.trim();
            let split = part
                .find(|c: char| !c.is_ascii_digit())
                .ok_or_else(|| bad(format!("segment {part:?} has no field letter")))?;
            let (digits, letters) = part.split_at(split);
            let width: u32 = digits
                .parse()
                .map_err(|_| bad(format!("segment {part:?} has no width")))?;
            let field = match letters.to_ascii_uppercase().as_str() {
                "R" => Field::Row,
                "BG" => Field::BankGroup,
                "B" => Field::Bank,
                "C" => Field::Column,
                other => return Err(bad(format!("unknown field {other:?}"))),
            };
            segments.push(Segment::new(field, width));
        }
        Self::custom(kind, label, segments).map_err(|e| match e {
            AddrError::BadLayout { reason, .. } => bad(reason),
            other => other,
        })
    }

    /// Builds a policy from an explicit segment list, checking that the
    /// per-field totals match the memory kind.
    pub fn custom(
        kind: MemoryKind,
        label: impl Into<String>,
        segments: Vec<Segment>,
    ) -> Result<Self, AddrError> {
        let mut totals = [0u32; 4];
        for seg in &segments {
            if seg.width == 0 {
                return Err(AddrError::BadLayout {
                    layout: render_layout(&segments),
                    reason: "zero-width segment".into(),
                });
            }
            totals[seg.field.index()] += seg.width;
        }
        for field in Field::ALL {
            let want = kind.field_width(field);
            let got = totals[field.index()];
            if got != want {
                return Err(AddrError::BadLayout {
                    layout: render_layout(&segments),
                    reason: format!("{field} uses {got} bits, {kind} needs {want}"),
                });
            }
        }
        Ok(MappingPolicy { label: label.into(), kind, segments })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> MemoryKind {
        self.kind
    }

    /// Segments most-significant first.
    pub fn field_layout(&self) -> &[Segment] {
        &self.segments
    }

    pub fn layout_string(&self) -> String {
        render_layout(&self.segments)
    }

    fn check_addr(&self, byte_addr: u64) -> Result<(), AddrError> {
        let align = self.kind.min_burst_bytes();
        if !byte_addr.is_multiple_of(align) {
            return Err(AddrError::Unaligned { addr: byte_addr, align });
        }
        let limit = self.kind.address_space();
        if byte_addr >= limit {
            return Err(AddrError::OutOfRange { addr: byte_addr, limit });
        }
        Ok(())
    }

    pub fn decode(&self, byte_addr: u64) -> Result<DecodedAddress, AddrError> {
        self.check_addr(byte_addr)?;
        let mut bits = byte_addr >> self.kind.addr_field_lo();
        let mut values = [0u64; 4];
        let mut consumed = [0u32; 4];
        for seg in self.segments.iter().rev() {
            let i = seg.field.index();
            values[i] |= (bits & mask(seg.width)) << consumed[i];
            consumed[i] += seg.width;
            bits >>= seg.width;
        }
        Ok(DecodedAddress {
            row: values[Field::Row.index()] as u32,
            bank_group: values[Field::BankGroup.index()] as u8,
            bank: values[Field::Bank.index()] as u8,
            column: values[Field::Column.index()] as u32,
        })
    }

    pub fn encode(&self, coords: DecodedAddress) -> Result<u64, AddrError> {
        for field in Field::ALL {
            let width = self.kind.field_width(field);
            let value = coords.get(field);
            if value > mask(width) {
                return Err(AddrError::CoordinateOutOfRange { field, value, width });
            }
        }
        let mut consumed = [0u32; 4];
        let mut shift = 0u32;
        let mut bits = 0u64;
        for seg in self.segments.iter().rev() {
            let i = seg.field.index();
            let part = (coords.get(seg.field) >> consumed[i]) & mask(seg.width);
            bits |= part << shift;
            consumed[i] += seg.width;
            shift += seg.width;
        }
        Ok(bits << self.kind.addr_field_lo())
    }
}

fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn render_layout(segments: &[Segment]) -> String {
    segments
        .iter()
        .map(|s| format!("{}{}", s.width, s.field.suffix()))
        .collect::<Vec<_>>()
        .join("-")
}
