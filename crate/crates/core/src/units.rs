//! Phases, three-phase containers and per-unit conversion.
//!
//! Every quantity inside the optimisation is per-unit on a per-phase power
//! base (`base_kva`) and a line-to-neutral voltage base (`base_kv`). The
//! impedance base follows as `base_kv^2 * 1000 / base_kva` ohm.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            other => Err(Error::Validation(format!("unknown phase '{other}'"))),
        }
    }
}

/// Subset of {a, b, c}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet([bool; 3]);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet([true; 3]);
    pub const EMPTY: PhaseSet = PhaseSet([false; 3]);

    pub fn single(phase: Phase) -> Self {
        let mut set = Self::EMPTY;
        set.insert(phase);
        set
    }

    pub fn insert(&mut self, phase: Phase) {
        self.0[phase.index()] = true;
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0[phase.index()]
    }

    pub fn is_empty(self) -> bool {
        !self.0.iter().any(|&p| p)
    }

    pub fn len(self) -> usize {
        self.0.iter().filter(|&&p| p).count()
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        Phase::ALL
            .iter()
            .all(|&p| !self.contains(p) || other.contains(p))
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet([
            self.0[0] && other.0[0],
            self.0[1] && other.0[1],
            self.0[2] && other.0[2],
        ])
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |&p| self.contains(p))
    }
}

impl FromIterator<Phase> for PhaseSet {
    fn from_iter<I: IntoIterator<Item = Phase>>(iter: I) -> Self {
        let mut set = PhaseSet::EMPTY;
        for p in iter {
            set.insert(p);
        }
        set
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            f.write_str(p.as_str())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PhaseSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| c.to_string().parse::<Phase>())
            .collect()
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            List(Vec<Phase>),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
            Repr::List(v) => Ok(v.into_iter().collect()),
        }
    }
}

/// Per-phase vector.
pub type PhaseVec = [f64; 3];

/// 3x3 phase-coupled matrix, row = receiving phase, column = source phase.
pub type Mat3 = [[f64; 3]; 3];

pub fn mat_vec(m: &Mat3, v: &PhaseVec) -> PhaseVec {
    let mut out = [0.0; 3];
    for (r, row) in m.iter().enumerate() {
        out[r] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

pub fn diagonal_of(m: &Mat3) -> Mat3 {
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        d[i][i] = m[i][i];
    }
    d
}

/// Physical quantity kinds understood by the per-unit system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    /// kW, kvar or kVA (per phase).
    Power,
    /// Ohm.
    Impedance,
    /// kV line-to-neutral.
    Voltage,
    /// kA.
    Current,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Per-phase power base in kVA.
    pub power_kva: f64,
    /// Line-to-neutral voltage base in kV.
    pub voltage_kv: f64,
}

impl PerUnitBase {
    pub fn new(power_kva: f64, voltage_kv: f64) -> Result<Self> {
        if !(power_kva.is_finite() && power_kva > 0.0) {
            return Err(Error::Base(format!("power base must be positive, got {power_kva}")));
        }
        if !(voltage_kv.is_finite() && voltage_kv > 0.0) {
            return Err(Error::Base(format!("voltage base must be positive, got {voltage_kv}")));
        }
        Ok(Self {
            power_kva,
            voltage_kv,
        })
    }

    pub fn impedance_ohm(&self) -> f64 {
        self.voltage_kv * self.voltage_kv * 1000.0 / self.power_kva
    }

    pub fn current_ka(&self) -> f64 {
        self.power_kva / self.voltage_kv / 1000.0
    }

    /// Power base in MW, used to turn $/pu into $/MWh.
    pub fn power_mw(&self) -> f64 {
        self.power_kva / 1000.0
    }

    fn base_of(&self, kind: Quantity) -> f64 {
        match kind {
            Quantity::Power => self.power_kva,
            Quantity::Impedance => self.impedance_ohm(),
            Quantity::Voltage => self.voltage_kv,
            Quantity::Current => self.current_ka(),
        }
    }

    pub fn to_per_unit(&self, kind: Quantity, value: f64) -> f64 {
        value / self.base_of(kind)
    }

    pub fn from_per_unit(&self, kind: Quantity, value: f64) -> f64 {
        value * self.base_of(kind)
    }
}

/// Converts a raw quantity to per-unit, validating the bases first.
pub fn to_per_unit(kind: Quantity, value: f64, power_kva: f64, voltage_kv: f64) -> Result<f64> {
    Ok(PerUnitBase::new(power_kva, voltage_kv)?.to_per_unit(kind, value))
}

pub fn from_per_unit(kind: Quantity, value: f64, power_kva: f64, voltage_kv: f64) -> Result<f64> {
    Ok(PerUnitBase::new(power_kva, voltage_kv)?.from_per_unit(kind, value))
}
