//! Atomic read/write shared memory.
//!
//! Every register the algorithm can touch is preallocated when the file is
//! created, so a [`RegisterFile`] is a flat vector of [`Word`]s addressed by a
//! fixed [`Layout`]. A read or a write of one register is one atomic step.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Fault};
use crate::Pid;

/// A proposable integer, or `⊥`.
///
/// `⊥` compares greater than every integer, so the minimum of a collect that
/// holds at least one deposited value is always that value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(u64),
    Bot,
}

impl Value {
    pub fn is_bot(self) -> bool {
        matches!(self, Value::Bot)
    }

    pub fn as_int(self) -> Option<u64> {
        match self {
            Value::Int(v) => Some(v),
            Value::Bot => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bot => f.write_str("bot"),
        }
    }
}

/// Phase-one verdict stamped into an adopt-commit `B` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Single,
    Multi,
}

/// Contents of one register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Word {
    Plain(Value),
    Stamped { marker: Marker, value: u64 },
}

impl Word {
    pub const BOT: Word = Word::Plain(Value::Bot);

    pub fn int(v: u64) -> Word {
        Word::Plain(Value::Int(v))
    }

    pub fn is_bot(self) -> bool {
        self == Word::BOT
    }

    /// The plain value held, or `None` for a stamped word.
    pub fn value(self) -> Option<Value> {
        match self {
            Word::Plain(v) => Some(v),
            Word::Stamped { .. } => None,
        }
    }

    fn encode(self, out: &mut Vec<u8>) {
        match self {
            Word::Plain(Value::Bot) => out.push(0),
            Word::Plain(Value::Int(v)) => push_varint(out, 1, v),
            Word::Stamped { marker: Marker::Single, value } => push_varint(out, 2, value),
            Word::Stamped { marker: Marker::Multi, value } => push_varint(out, 3, value),
        }
    }
}

/// Tagged LEB128: a 2-bit tag and the first 5 payload bits share the lead byte.
pub(crate) fn push_varint(out: &mut Vec<u8>, tag: u8, mut v: u64) {
    let mut lead = tag << 6;
    lead |= (v & 0x1f) as u8;
    v >>= 5;
    if v != 0 {
        lead |= 0x20;
    }
    out.push(lead);
    while v != 0 {
        let mut b = (v & 0x7f) as u8;
        v >>= 7;
        if v != 0 {
            b |= 0x80;
        }
        out.push(b);
    }
}

/// Encodes a value for canonical state keys (`⊥` is the single byte 0).
pub(crate) fn encode_value(v: Value, out: &mut Vec<u8>) {
    Word::Plain(v).encode(out)
}

impl Serialize for Word {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Word::Plain(Value::Bot) => s.serialize_str("bot"),
            Word::Plain(Value::Int(v)) => s.serialize_u64(v),
            Word::Stamped { marker, value } => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry(
                    "m",
                    match marker {
                        Marker::Single => "single",
                        Marker::Multi => "multi",
                    },
                )?;
                m.serialize_entry("v", &value)?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Word {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct WordVisitor;

        impl<'de> Visitor<'de> for WordVisitor {
            type Value = Word;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative integer, \"bot\", or {\"m\":..,\"v\":..}")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Word, E> {
                Ok(Word::int(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Word, E> {
                u64::try_from(v)
                    .map(Word::int)
                    .map_err(|_| E::custom("negative register value"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Word, E> {
                if v == "bot" {
                    Ok(Word::BOT)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Word, A::Error> {
                let mut marker = None;
                let mut value = None;
                while let Some(key) = map.next_key::<String>()? {
                    match key.as_str() {
                        "m" => {
                            let m: String = map.next_value()?;
                            marker = Some(match m.as_str() {
                                "single" => Marker::Single,
                                "multi" => Marker::Multi,
                                other => {
                                    return Err(de::Error::invalid_value(
                                        de::Unexpected::Str(other),
                                        &"\"single\" or \"multi\"",
                                    ))
                                }
                            });
                        }
                        "v" => value = Some(map.next_value::<u64>()?),
                        other => return Err(de::Error::unknown_field(other, &["m", "v"])),
                    }
                }
                match (marker, value) {
                    (Some(marker), Some(value)) => Ok(Word::Stamped { marker, value }),
                    (None, _) => Err(de::Error::missing_field("m")),
                    (_, None) => Err(de::Error::missing_field("v")),
                }
            }
        }

        d.deserialize_any(WordVisitor)
    }
}

/// Name of a shared register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegisterId {
    /// `INPUT[i]`, 1-based.
    Input(usize),
    Dec,
    /// Adopt-commit phase-one array `AC.A[i]`, 1-based.
    AcA(usize),
    /// Adopt-commit phase-two array `AC.B[i]`, 1-based.
    AcB(usize),
    /// Tournament cell `ARM[level][node][cell]`; cell 0/1 are the side flags, 2 is `turn`.
    Arm { level: usize, node: usize, cell: usize },
}

impl fmt::Display for RegisterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            RegisterId::Input(i) => write!(f, "INPUT[{i}]"),
            RegisterId::Dec => f.write_str("DEC"),
            RegisterId::AcA(i) => write!(f, "AC.A[{i}]"),
            RegisterId::AcB(i) => write!(f, "AC.B[{i}]"),
            RegisterId::Arm { level, node, cell } => write!(f, "ARM[{level}][{node}][{cell}]"),
        }
    }
}

impl FromStr for RegisterId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        fn indices(rest: &str) -> Option<Vec<usize>> {
            let mut out = Vec::new();
            let mut rest = rest;
            while !rest.is_empty() {
                let body = rest.strip_prefix('[')?;
                let close = body.find(']')?;
                out.push(body[..close].parse().ok()?);
                rest = &body[close + 1..];
            }
            Some(out)
        }
        let bad = || format!("unrecognized register name {s:?}");
        if s == "DEC" {
            return Ok(RegisterId::Dec);
        }
        let (name, rest) = s.split_at(s.find('[').ok_or_else(bad)?);
        let idx = indices(rest).ok_or_else(bad)?;
        match (name, idx.as_slice()) {
            ("INPUT", &[i]) if i >= 1 => Ok(RegisterId::Input(i)),
            ("AC.A", &[i]) if i >= 1 => Ok(RegisterId::AcA(i)),
            ("AC.B", &[i]) if i >= 1 => Ok(RegisterId::AcB(i)),
            ("ARM", &[level, node, cell]) => Ok(RegisterId::Arm { level, node, cell }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for RegisterId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RegisterId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Who may write a register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ownership {
    AnyWriter,
    OnlyWriter(Pid),
}

/// Number of tournament levels for `n` contenders: `ceil(log2 n)`, 0 when `n = 1`.
pub fn arm_levels(n: usize) -> usize {
    let mut levels = 0;
    while (1usize << levels) < n {
        levels += 1;
    }
    levels
}

/// Number of two-process nodes at tournament level `level`.
pub fn arm_nodes_at(n: usize, level: usize) -> usize {
    n.div_ceil(1 << (level + 1))
}

/// Static register namespace for a system of `n` processes.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    k: usize,
    /// First slot of each tournament level.
    arm_base: Vec<usize>,
    owners: Vec<Ownership>,
    ids: Vec<RegisterId>,
}

impl Layout {
    pub fn new(n: usize, k: usize) -> Result<Self, ConfigError> {
        if n == 0 {
            return Err(ConfigError::new("n", "at least one process is required"));
        }
        if k > n {
            return Err(ConfigError::new("k", format!("k = {k} exceeds n = {n}")));
        }
        let mut ids = Vec::new();
        let mut owners = Vec::new();
        for i in 1..=n {
            ids.push(RegisterId::Input(i));
            owners.push(Ownership::OnlyWriter(Pid(i)));
        }
        ids.push(RegisterId::Dec);
        owners.push(Ownership::AnyWriter);
        for i in 1..=n {
            ids.push(RegisterId::AcA(i));
            owners.push(Ownership::OnlyWriter(Pid(i)));
        }
        for i in 1..=n {
            ids.push(RegisterId::AcB(i));
            owners.push(Ownership::OnlyWriter(Pid(i)));
        }
        let mut arm_base = Vec::new();
        for level in 0..arm_levels(n) {
            arm_base.push(ids.len());
            for node in 0..arm_nodes_at(n, level) {
                for cell in 0..3 {
                    ids.push(RegisterId::Arm { level, node, cell });
                    // Leaf flags belong to a fixed process; higher flags are
                    // written by whichever contender won the subtree below.
                    let owner = match (level, cell) {
                        (0, 0 | 1) => Ownership::OnlyWriter(Pid(2 * node + cell + 1)),
                        _ => Ownership::AnyWriter,
                    };
                    owners.push(owner);
                }
            }
        }
        Ok(Layout {
            n,
            k,
            arm_base,
            owners,
            ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every register, in slot order.
    pub fn ids(&self) -> &[RegisterId] {
        &self.ids
    }

    pub fn slot(&self, r: RegisterId) -> Option<usize> {
        let n = self.n;
        match r {
            RegisterId::Input(i) if (1..=n).contains(&i) => Some(i - 1),
            RegisterId::Dec => Some(n),
            RegisterId::AcA(i) if (1..=n).contains(&i) => Some(n + i),
            RegisterId::AcB(i) if (1..=n).contains(&i) => Some(2 * n + i),
            RegisterId::Arm { level, node, cell }
                if level < self.arm_base.len() && node < arm_nodes_at(n, level) && cell < 3 =>
            {
                Some(self.arm_base[level] + 3 * node + cell)
            }
            _ => None,
        }
    }

    pub fn ownership(&self, r: RegisterId) -> Option<Ownership> {
        self.slot(r).map(|s| self.owners[s])
    }
}

/// All shared registers of one system, with SWMR ownership enforcement.
#[derive(Debug, Clone)]
pub struct RegisterFile {
    layout: Arc<Layout>,
    cells: Vec<Word>,
}

impl PartialEq for RegisterFile {
    fn eq(&self, other: &Self) -> bool {
        self.cells == other.cells && (Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout)
    }
}

impl Eq for RegisterFile {}

impl RegisterFile {
    /// A file with every register of an `(n, k)` system set to `⊥`.
    pub fn new(n: usize, k: usize) -> Result<Self, ConfigError> {
        Ok(Self::with_layout(Arc::new(Layout::new(n, k)?)))
    }

    pub fn with_layout(layout: Arc<Layout>) -> Self {
        let cells = vec![Word::BOT; layout.len()];
        RegisterFile { layout, cells }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.layout.n
    }

    fn slot(&self, r: RegisterId) -> Result<usize, Fault> {
        self.layout.slot(r).ok_or(Fault::UnknownRegister(r))
    }

    pub fn read(&self, r: RegisterId) -> Result<Word, Fault> {
        Ok(self.cells[self.slot(r)?])
    }

    pub fn write(&mut self, r: RegisterId, w: Word, writer: Pid) -> Result<(), Fault> {
        let slot = self.slot(r)?;
        if writer.0 == 0 || writer.0 > self.layout.n {
            return Err(Fault::UnknownPid(writer));
        }
        if let Ownership::OnlyWriter(owner) = self.layout.owners[slot] {
            if owner != writer {
                return Err(Fault::SwmrViolation {
                    register: r,
                    writer,
                    owner,
                });
            }
        }
        self.cells[slot] = w;
        Ok(())
    }

    /// Register contents in slot order.
    pub fn cells(&self) -> &[Word] {
        &self.cells
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        for w in &self.cells {
            w.encode(out);
        }
    }

    /// Digest of the register contents; equal files give equal digests.
    pub fn canonical_hash(&self) -> u64 {
        let mut buf = Vec::with_capacity(self.cells.len() + 2);
        push_varint(&mut buf, 0, self.layout.n as u64);
        self.encode(&mut buf);
        fnv1a(&buf)
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Smallest value in a collect; `⊥` only if every entry is `⊥`.
pub fn min_value<'a>(values: impl IntoIterator<Item = &'a Value>) -> Option<Value> {
    values.into_iter().copied().min()
}
