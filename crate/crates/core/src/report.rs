//! Validation reports and JSON helpers shared by every module.

use num_rational::BigRational;
use serde::{Serialize, Serializer};

/// One failed check: a readable message and a machine-readable locant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub message: String,
    pub locant: serde_json::Value,
}

/// Outcome of a check; `pass` holds exactly when there are no witnesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub witnesses: Vec<Witness>,
}

impl ValidationReport {
    pub fn new() -> Self {
        ValidationReport {
            pass: true,
            witnesses: Vec::new(),
        }
    }

    pub fn fail(&mut self, message: impl Into<String>, locant: serde_json::Value) {
        self.pass = false;
        self.witnesses.push(Witness {
            message: message.into(),
            locant,
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.pass &= other.pass;
        self.witnesses.extend(other.witnesses);
    }
}

impl Default for ValidationReport {
    fn default() -> Self {
        Self::new()
    }
}

/// A float that serializes with 17 significant digits (`null` if not finite).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct F64(pub f64);

pub fn format_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign-free canonical zero
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

impl Serialize for F64 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        let raw = serde_json::value::RawValue::from_string(format_f64(self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

pub fn floats(xs: &[f64]) -> Vec<F64> {
    xs.iter().copied().map(F64).collect()
}

/// A rational that serializes as the string `"p/q"` (or `"p"`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rat(pub BigRational);

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

pub fn rats(xs: &[BigRational]) -> Vec<Rat> {
    xs.iter().cloned().map(Rat).collect()
}
