//! Switch identifiers, fault sets and the diagnosis class set.
//!
//! Each phase leg of the inverter carries four series IGBTs, numbered 1..4
//! from the positive rail down. A [`FaultSet`] is a bitmask over the twelve
//! switches; bit `k` corresponds to the `k`-th switch in the order
//! `Sa1..Sa4, Sb1..Sb4, Sc1..Sc4`, which is also the digit order of a
//! [`LabelCode`].

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One of the three output phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The phase that follows this one in the a → b → c → a cycle.
    pub fn next(self) -> Phase {
        match self {
            Phase::A => Phase::B,
            Phase::B => Phase::C,
            Phase::C => Phase::A,
        }
    }

    fn letter(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// A single IGBT, identified by phase leg and position 1..=4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SwitchId {
    phase: Phase,
    position: u8,
}

impl SwitchId {
    pub fn new(phase: Phase, position: u8) -> Result<Self> {
        if !(1..=4).contains(&position) {
            return Err(Error::UnknownFault(format!("S{}{}", phase, position)));
        }
        Ok(SwitchId { phase, position })
    }

    /// Builds the switch from its flat index `0..12`.
    pub fn from_index(index: usize) -> Option<Self> {
        if index >= 12 {
            return None;
        }
        Some(SwitchId {
            phase: Phase::ALL[index / 4],
            position: (index % 4) as u8 + 1,
        })
    }

    pub fn phase(self) -> Phase {
        self.phase
    }

    pub fn position(self) -> u8 {
        self.position
    }

    pub fn index(self) -> usize {
        self.phase.index() * 4 + (self.position as usize - 1)
    }

    pub fn all() -> impl Iterator<Item = SwitchId> {
        (0..12).filter_map(SwitchId::from_index)
    }
}

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}{}", self.phase, self.position)
    }
}

impl FromStr for SwitchId {
    type Err = Error;

    /// Accepts `Sa1`, `sa1`, `S_a1` and `a1`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let body = lower
            .strip_prefix("s_")
            .or_else(|| lower.strip_prefix('s'))
            .unwrap_or(&lower);
        let mut chars = body.chars();
        let phase = match chars.next() {
            Some('a') => Phase::A,
            Some('b') => Phase::B,
            Some('c') => Phase::C,
            _ => return Err(Error::UnknownFault(s.to_string())),
        };
        let position: u8 = chars
            .as_str()
            .parse()
            .map_err(|_| Error::UnknownFault(s.to_string()))?;
        SwitchId::new(phase, position).map_err(|_| Error::UnknownFault(s.to_string()))
    }
}

/// Set of open-circuited switches. Empty means the inverter is healthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct FaultSet(u16);

impl FaultSet {
    pub const EMPTY: FaultSet = FaultSet(0);

    pub fn from_bits(bits: u16) -> Option<Self> {
        (bits < 1 << 12).then_some(FaultSet(bits))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn single(id: SwitchId) -> Self {
        FaultSet(1 << id.index())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, id: SwitchId) -> bool {
        self.0 & (1 << id.index()) != 0
    }

    pub fn insert(&mut self, id: SwitchId) {
        self.0 |= 1 << id.index();
    }

    pub fn union(self, other: FaultSet) -> FaultSet {
        FaultSet(self.0 | other.0)
    }

    pub fn is_superset(self, other: FaultSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn iter(self) -> impl Iterator<Item = SwitchId> {
        SwitchId::all().filter(move |id| self.contains(*id))
    }

    pub fn to_label_code(self) -> LabelCode {
        LabelCode(self.0)
    }
}

impl FromIterator<SwitchId> for FaultSet {
    fn from_iter<I: IntoIterator<Item = SwitchId>>(iter: I) -> Self {
        let mut set = FaultSet::EMPTY;
        for id in iter {
            set.insert(id);
        }
        set
    }
}

impl fmt::Display for FaultSet {
    /// `normal` for the empty set, otherwise switch names joined by `+`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return write!(f, "normal");
        }
        let names: Vec<String> = self.iter().map(|id| id.to_string()).collect();
        write!(f, "{}", names.join("+"))
    }
}

impl FromStr for FaultSet {
    type Err = Error;

    /// Parses `none`/`normal`, or switch names separated by `+`, `,` or `&`.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("none") || trimmed.eq_ignore_ascii_case("normal") {
            return Ok(FaultSet::EMPTY);
        }
        if trimmed.is_empty() {
            return Err(Error::UnknownFault(s.to_string()));
        }
        trimmed
            .split(['+', ',', '&'])
            .map(|part| part.parse::<SwitchId>())
            .collect()
    }
}

/// Twelve-digit display code, one digit per switch (`d1 = Sa1 ... d12 = Sc4`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelCode(u16);

impl LabelCode {
    pub fn digit(self, k: usize) -> bool {
        k < 12 && self.0 & (1 << k) != 0
    }

    pub fn fault_set(self) -> FaultSet {
        FaultSet(self.0)
    }
}

impl fmt::Display for LabelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..12 {
            f.write_str(if self.digit(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for LabelCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 12 {
            return Err(Error::Format(format!("label code `{s}` is not 12 digits")));
        }
        let mut bits = 0u16;
        for (k, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << k,
                _ => {
                    return Err(Error::Format(format!(
                        "label code `{s}` has non-binary digit"
                    )))
                }
            }
        }
        Ok(LabelCode(bits))
    }
}

/// One diagnosis class: a fault combination with a stable small id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultClass {
    pub id: u16,
    pub components: FaultSet,
}

impl FaultClass {
    pub fn is_normal(&self) -> bool {
        self.components.is_empty()
    }

    pub fn to_label_code(&self) -> LabelCode {
        self.components.to_label_code()
    }

    pub fn name(&self) -> String {
        self.components.to_string()
    }
}

/// Ordered list of diagnosis classes. Class ids are positions in the list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    classes: Vec<FaultClass>,
}

impl ClassSet {
    /// Builds a class set from fault combinations. Ids are assigned in order.
    /// Duplicates are rejected and the healthy state must be present.
    pub fn new(components: impl IntoIterator<Item = FaultSet>) -> Result<Self> {
        let mut classes: Vec<FaultClass> = Vec::new();
        for set in components {
            if classes.iter().any(|c| c.components == set) {
                return Err(Error::Config(format!("duplicate class `{set}`")));
            }
            if classes.len() >= u16::MAX as usize {
                return Err(Error::Config("too many classes".into()));
            }
            classes.push(FaultClass {
                id: classes.len() as u16,
                components: set,
            });
        }
        if !classes.iter().any(FaultClass::is_normal) {
            return Err(Error::Config(
                "class set must contain the normal state".into(),
            ));
        }
        Ok(ClassSet { classes })
    }

    /// Normal state, the twelve single-switch faults, and the four double
    /// faults `Sa1+Sa3`, `Sa2+Sa3`, `Sa1+Sb2` and `Sc1+Sc2`.
    pub fn standard() -> Self {
        let mut sets = vec![FaultSet::EMPTY];
        sets.extend(SwitchId::all().map(FaultSet::single));
        for pair in ["Sa1+Sa3", "Sa2+Sa3", "Sa1+Sb2", "Sc1+Sc2"] {
            sets.push(pair.parse().expect("static class name"));
        }
        ClassSet::new(sets).expect("standard class set is valid")
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, id: u16) -> Option<&FaultClass> {
        self.classes.get(id as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FaultClass> {
        self.classes.iter()
    }

    pub fn normal(&self) -> &FaultClass {
        self.classes
            .iter()
            .find(|c| c.is_normal())
            .expect("class set always contains normal")
    }

    pub fn find(&self, components: FaultSet) -> Option<&FaultClass> {
        self.classes.iter().find(|c| c.components == components)
    }

    pub fn find_code(&self, code: LabelCode) -> Option<&FaultClass> {
        self.find(code.fault_set())
    }
}

impl Default for ClassSet {
    fn default() -> Self {
        ClassSet::standard()
    }
}
